"""Deterministic reference transformer (decoder-only, float64, numpy).

The model is small on purpose: exact full-sequence recomputation at every
generation step is cheap, reverse-mode gradients with respect to the input
embedding rows are exact, and every inference is a pure function of
(inputs, weights).  Both endpoints of a steganographic session must obtain
bit-identical logits from the same context, so all arithmetic is 64-bit and
no step depends on hidden state carried between calls.

Positions are assigned to window slots (0..len-1), never to original
generation indices: a sliding window must present the same tensor for the
same tokens regardless of how far generation has progressed.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .errors import ContextOverflow, EmptyContext, ShapeError, UnknownToken
from .vocab import Vocabulary, byte_vocab

CHECKPOINT_MAGIC = b"ASWL"
CHECKPOINT_VERSION = 1

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int = 2
    d_model: int = 64
    n_heads: int = 4
    d_ff: int = 256
    vocab_size: int = 259
    max_context: int = 512

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")


def _gelu(x):
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def _gelu_grad(x):
    return 0.5 * (1.0 + erf(x / _SQRT2)) + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def _layernorm_forward(x, g, b, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv)


def _layernorm_backward(dy, cache, g):
    xhat, inv = cache
    n = xhat.shape[-1]
    dxhat = dy * g
    dx = inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    dg = (dy * xhat).reshape(-1, n).sum(axis=0)
    db = dy.reshape(-1, n).sum(axis=0)
    return dx, dg, db


def sinusoidal_positions(n: int, d: int) -> np.ndarray:
    pos = np.arange(n, dtype=np.float64)[:, None]
    idx = np.arange(d // 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * idx / d)
    out = np.zeros((n, d), dtype=np.float64)
    out[:, 0::2] = np.sin(angle)
    out[:, 1::2] = np.cos(angle)
    return out


def _param_layout(cfg: ModelConfig):
    """Ordered (name, shape) pairs; also the checkpoint block order."""
    e, f, v = cfg.d_model, cfg.d_ff, cfg.vocab_size
    layout = [("wte", (v, e))]
    for i in range(cfg.n_layers):
        p = f"layer{i}."
        layout += [
            (p + "ln1_g", (e,)), (p + "ln1_b", (e,)),
            (p + "wq", (e, e)), (p + "bq", (e,)),
            (p + "wk", (e, e)), (p + "bk", (e,)),
            (p + "wv", (e, e)), (p + "bv", (e,)),
            (p + "wo", (e, e)), (p + "bo", (e,)),
            (p + "ln2_g", (e,)), (p + "ln2_b", (e,)),
            (p + "w1", (e, f)), (p + "b1", (f,)),
            (p + "w2", (f, e)), (p + "b2", (e,)),
        ]
    layout += [("lnf_g", (e,)), ("lnf_b", (e,)), ("w_un", (e, v))]
    return layout


def init_params(cfg: ModelConfig, seed: int) -> dict:
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in _param_layout(cfg):
        base = name.split(".")[-1]
        if base.startswith("b") or base.endswith("_b"):
            params[name] = np.zeros(shape, dtype=np.float64)
        elif base.endswith("_g"):
            params[name] = np.ones(shape, dtype=np.float64)
        else:
            scale = 0.02 if base in ("wte", "w_un") else 1.0 / np.sqrt(shape[0])
            params[name] = rng.normal(0.0, scale, size=shape)
    return params


class TransformerModel:
    """Frozen-weight inference plus exact backprop to inputs and weights."""

    def __init__(self, cfg: ModelConfig, params: dict, vocab: Vocabulary | None = None):
        self.cfg = cfg
        self.params = params
        self.vocab = vocab if vocab is not None else byte_vocab()
        if self.vocab.size != cfg.vocab_size:
            raise ShapeError("vocabulary size does not match model config")
        self._pos = sinusoidal_positions(cfg.max_context, cfg.d_model)

    # ---- embedding level -------------------------------------------------

    def embed_tokens(self, tokens) -> np.ndarray:
        """Embedding-table rows for a token sequence (positions are added
        inside the forward pass, not here)."""
        toks = np.asarray(list(tokens), dtype=np.int64)
        if toks.size and (toks.min() < 0 or toks.max() >= self.cfg.vocab_size):
            raise UnknownToken("token id outside vocabulary")
        return self.params["wte"][toks].copy()

    def forward(self, E: np.ndarray, want_cache: bool = False):
        """All-position logits for a batch of embedded windows.

        E has shape (n, e) or (B, n, e); returns logits of shape
        (..., n, vocab_size).  With want_cache=True also returns the
        intermediate activations needed by backward().
        """
        squeeze = E.ndim == 2
        if squeeze:
            E = E[None]
        if E.ndim != 3 or E.shape[-1] != self.cfg.d_model:
            raise ShapeError(f"expected (..., n, {self.cfg.d_model}) embeddings")
        B, n, e = E.shape
        if n == 0:
            raise EmptyContext("context must contain at least one position")
        if n > self.cfg.max_context:
            raise ContextOverflow(f"context of {n} exceeds {self.cfg.max_context}")

        p = self.params
        H = self.cfg.n_heads
        dh = e // H
        scale = 1.0 / np.sqrt(dh)
        mask = np.triu(np.full((n, n), -np.inf), k=1)

        cache = {"E": E, "n": n, "B": B, "layers": []}
        h = E + self._pos[:n]
        for i in range(self.cfg.n_layers):
            pre = f"layer{i}."
            lc = {"h_in": h}
            a, lc["ln1"] = _layernorm_forward(h, p[pre + "ln1_g"], p[pre + "ln1_b"])
            lc["a"] = a
            q = a @ p[pre + "wq"] + p[pre + "bq"]
            k = a @ p[pre + "wk"] + p[pre + "bk"]
            v = a @ p[pre + "wv"] + p[pre + "bv"]
            # (B, H, n, dh)
            q = q.reshape(B, n, H, dh).transpose(0, 2, 1, 3)
            k = k.reshape(B, n, H, dh).transpose(0, 2, 1, 3)
            v = v.reshape(B, n, H, dh).transpose(0, 2, 1, 3)
            s = q @ k.transpose(0, 1, 3, 2) * scale + mask
            s -= s.max(axis=-1, keepdims=True)
            expo = np.exp(s)
            att = expo / expo.sum(axis=-1, keepdims=True)
            mix = (att @ v).transpose(0, 2, 1, 3).reshape(B, n, e)
            lc.update(q=q, k=k, v=v, att=att, mix=mix)
            h = h + mix @ p[pre + "wo"] + p[pre + "bo"]
            lc["h_mid"] = h
            a2, lc["ln2"] = _layernorm_forward(h, p[pre + "ln2_g"], p[pre + "ln2_b"])
            f1 = a2 @ p[pre + "w1"] + p[pre + "b1"]
            g = _gelu(f1)
            lc.update(a2=a2, f1=f1, g=g)
            h = h + g @ p[pre + "w2"] + p[pre + "b2"]
            cache["layers"].append(lc)

        hf, lnf_cache = _layernorm_forward(h, p["lnf_g"], p["lnf_b"])
        cache["lnf"] = lnf_cache
        cache["hf"] = hf
        logits = hf @ p["w_un"]
        if squeeze:
            logits = logits[0]
        if want_cache:
            cache["squeeze"] = squeeze
            return logits, cache
        return logits

    def backward(self, dlogits: np.ndarray, cache, want_param_grads: bool = False):
        """Reverse-mode pass.  Returns dE (gradient w.r.t. the input
        embedding matrix) and, optionally, a dict of parameter gradients."""
        if cache.get("squeeze") and dlogits.ndim == 2:
            dlogits = dlogits[None]
        p = self.params
        B, n = cache["B"], cache["n"]
        e = self.cfg.d_model
        H = self.cfg.n_heads
        dh = e // H
        scale = 1.0 / np.sqrt(dh)
        grads = {} if want_param_grads else None

        def acc(name, val):
            if grads is not None:
                grads[name] = grads.get(name, 0.0) + val

        acc("w_un", cache["hf"].reshape(-1, e).T @ dlogits.reshape(-1, self.cfg.vocab_size))
        dhf = dlogits @ p["w_un"].T
        dh_, dg_, db_ = _layernorm_backward(dhf, cache["lnf"], p["lnf_g"])
        acc("lnf_g", dg_)
        acc("lnf_b", db_)

        for i in reversed(range(self.cfg.n_layers)):
            pre = f"layer{i}."
            lc = cache["layers"][i]
            # FFN
            dg = dh_ @ p[pre + "w2"].T
            acc(pre + "w2", lc["g"].reshape(-1, self.cfg.d_ff).T @ dh_.reshape(-1, e))
            acc(pre + "b2", dh_.reshape(-1, e).sum(axis=0))
            df1 = dg * _gelu_grad(lc["f1"])
            da2 = df1 @ p[pre + "w1"].T
            acc(pre + "w1", lc["a2"].reshape(-1, e).T @ df1.reshape(-1, self.cfg.d_ff))
            acc(pre + "b1", df1.reshape(-1, self.cfg.d_ff).sum(axis=0))
            dmid, dg2, db2 = _layernorm_backward(da2, lc["ln2"], p[pre + "ln2_g"])
            acc(pre + "ln2_g", dg2)
            acc(pre + "ln2_b", db2)
            dh_ = dh_ + dmid
            # attention output projection
            dmix = dh_ @ p[pre + "wo"].T
            acc(pre + "wo", lc["mix"].reshape(-1, e).T @ dh_.reshape(-1, e))
            acc(pre + "bo", dh_.reshape(-1, e).sum(axis=0))
            dmix = dmix.reshape(B, n, H, dh).transpose(0, 2, 1, 3)
            att, q, k, v = lc["att"], lc["q"], lc["k"], lc["v"]
            datt = dmix @ v.transpose(0, 1, 3, 2)
            dv = att.transpose(0, 1, 3, 2) @ dmix
            ds = att * (datt - (datt * att).sum(axis=-1, keepdims=True))
            dq = ds @ k * scale
            dk = ds.transpose(0, 1, 3, 2) @ q * scale
            dq = dq.transpose(0, 2, 1, 3).reshape(B, n, e)
            dk = dk.transpose(0, 2, 1, 3).reshape(B, n, e)
            dv = dv.transpose(0, 2, 1, 3).reshape(B, n, e)
            a = lc["a"]
            da = dq @ p[pre + "wq"].T + dk @ p[pre + "wk"].T + dv @ p[pre + "wv"].T
            a2d = a.reshape(-1, e)
            acc(pre + "wq", a2d.T @ dq.reshape(-1, e))
            acc(pre + "bq", dq.reshape(-1, e).sum(axis=0))
            acc(pre + "wk", a2d.T @ dk.reshape(-1, e))
            acc(pre + "bk", dk.reshape(-1, e).sum(axis=0))
            acc(pre + "wv", a2d.T @ dv.reshape(-1, e))
            acc(pre + "bv", dv.reshape(-1, e).sum(axis=0))
            din, dg1, db1 = _layernorm_backward(da, lc["ln1"], p[pre + "ln1_g"])
            acc(pre + "ln1_g", dg1)
            acc(pre + "ln1_b", db1)
            dh_ = dh_ + din

        dE = dh_
        if cache.get("squeeze"):
            dE = dE[0]
        if want_param_grads:
            return dE, grads
        return dE

    # ---- token level -----------------------------------------------------

    def next_logits(self, tokens) -> np.ndarray:
        """Next-token logits for a token context.

        Exactly equal (bit-identical) to next_logits_emb(embed_tokens(ctx)):
        the token path is implemented as that composition.
        """
        toks = list(tokens)
        if not toks:
            raise EmptyContext("token context is empty")
        return self.next_logits_emb(self.embed_tokens(toks))

    def next_logits_emb(self, E: np.ndarray) -> np.ndarray:
        """Next-token logits for an embedding-level context."""
        if E.ndim != 2:
            raise ShapeError("expected a (n, e) embedding matrix")
        if E.shape[0] == 0:
            raise EmptyContext("embedding context has no rows")
        return self.forward(E)[-1]

    # ---- persistence -----------------------------------------------------

    def save(self, path):
        cfg = self.cfg
        header = CHECKPOINT_MAGIC + struct.pack(
            "<6I", CHECKPOINT_VERSION, cfg.n_layers, cfg.d_model,
            cfg.n_heads, cfg.d_ff, cfg.vocab_size,
        )
        with open(path, "wb") as fh:
            fh.write(header)
            for name, shape in _param_layout(cfg):
                arr = np.ascontiguousarray(self.params[name], dtype="<f8")
                if arr.shape != shape:
                    raise ShapeError(f"{name}: expected {shape}, got {arr.shape}")
                fh.write(arr.tobytes())

    @classmethod
    def load(cls, path, vocab: Vocabulary | None = None) -> "TransformerModel":
        with open(path, "rb") as fh:
            magic = fh.read(4)
            if magic != CHECKPOINT_MAGIC:
                raise ShapeError(f"bad checkpoint magic {magic!r}")
            version, L, e, H, f, v = struct.unpack("<6I", fh.read(24))
            if version != CHECKPOINT_VERSION:
                raise ShapeError(f"unsupported checkpoint version {version}")
            cfg = ModelConfig(n_layers=L, d_model=e, n_heads=H, d_ff=f, vocab_size=v)
            params = {}
            for name, shape in _param_layout(cfg):
                count = int(np.prod(shape))
                buf = fh.read(count * 8)
                if len(buf) != count * 8:
                    raise ShapeError(f"truncated checkpoint while reading {name}")
                params[name] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
        return cls(cfg, params, vocab=vocab)

    def param_hash(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for name, _ in _param_layout(self.cfg):
            h.update(np.ascontiguousarray(self.params[name], dtype="<f8").tobytes())
        return h.hexdigest()
