"""Synthetic corpus and reference-model pretraining.

The corpus is built so window effects are visible at toy scale:

* every document opens with a two-byte mode header ("0:" .. "3:") and the
  header selects which first-order Markov chain generates the body, so a
  policy that drops the header loses real predictive information;
* half the documents elide an interior span of the chain and mark the gap
  with "~", so a short context of the form header ~ recent-bytes is
  in-distribution and reads as the tail of a longer document;
* bodies end with "." and only then <eos>, keeping the end-of-sequence
  hazard near zero in mid-document contexts.

Training is plain next-token cross entropy with AdamW over all weights,
batched over equal-length documents so no padding or masking is needed.
Everything is seeded; two runs of train_model with the same config produce
bit-identical checkpoints.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import TrainingDiverged
from .model import ModelConfig, TransformerModel, init_params
from .vocab import byte_vocab

ALPHABET = [ord(c) for c in "abcdefghijklmnop"]
ELISION = ord("~")
TERMINATOR = ord(".")
N_MODES = 4


def _mode_chains(seed: int):
    """Per-mode initial distribution and transition matrix over ALPHABET."""
    rng = np.random.default_rng(seed)
    a = len(ALPHABET)
    chains = []
    for _ in range(N_MODES):
        init = rng.dirichlet(np.full(a, 0.6))
        trans = rng.dirichlet(np.full(a, 0.4), size=a)
        chains.append((init, trans))
    return chains


def mode_header(mode: int) -> bytes:
    return bytes([ord("0") + mode, ord(":")])


def _sample_chain(chain, length, rng):
    init, trans = chain
    out = np.empty(length, dtype=np.int64)
    s = rng.choice(len(ALPHABET), p=init)
    for i in range(length):
        out[i] = s
        s = rng.choice(len(ALPHABET), p=trans[s])
    return [ALPHABET[i] for i in out]


def make_document(chains, mode: int, body_len: int, elide: bool, rng) -> list:
    """Byte tokens of one document, without <bos>/<eos>."""
    doc = list(mode_header(mode))
    if elide and body_len >= 3:
        # elide directly after the header: the surviving tail starts mid-chain
        visible = body_len - 1
        gap = int(rng.integers(5, 80))
        chain_bytes = _sample_chain(chains[mode], gap + visible, rng)
        doc.append(ELISION)
        doc += chain_bytes[gap:]
    else:
        doc += _sample_chain(chains[mode], body_len, rng)
    doc.append(TERMINATOR)
    return doc


@dataclass(frozen=True)
class PretrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    steps: int = 1200
    batch_size: int = 16
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.01
    grad_clip: float = 1.0
    min_body: int = 16
    mean_body: int = 150
    max_body: int = 320
    elide_frac: float = 0.5
    seed: int = 0


TINY = ModelConfig(n_layers=1, d_model=32, n_heads=2, d_ff=64)
DEFAULT = ModelConfig(n_layers=2, d_model=64, n_heads=4, d_ff=256)

PRESETS = {
    "tiny": PretrainConfig(model=TINY, steps=600),
    "default": PretrainConfig(model=DEFAULT, steps=1200),
}


def _batch(chains, cfg: PretrainConfig, vocab, rng) -> np.ndarray:
    # geometric body length: the end-of-document hazard is memoryless, so a
    # window that cannot see the true length loses nothing on it
    draw = int(rng.geometric(1.0 / (cfg.mean_body - cfg.min_body + 1)))
    body_len = min(cfg.min_body + draw - 1, cfg.max_body)
    rows = []
    for _ in range(cfg.batch_size):
        mode = int(rng.integers(0, N_MODES))
        elide = rng.random() < cfg.elide_frac
        doc = make_document(chains, mode, body_len, elide, rng)
        rows.append([vocab.bos_id] + doc + [vocab.eos_id])
    return np.asarray(rows, dtype=np.int64)


def _xent_and_dlogits(logits, targets):
    z = logits - logits.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    B, n, v = logits.shape
    idx = (np.arange(B)[:, None], np.arange(n)[None, :], targets)
    loss = float(-logp[idx].mean())
    d = np.exp(logp)
    d[idx] -= 1.0
    return loss, d / (B * n)


def train_model(cfg: PretrainConfig, log_every: int = 0) -> TransformerModel:
    """Pretrain a model on the synthetic corpus; deterministic per config."""
    vocab = byte_vocab()
    model = TransformerModel(cfg.model, init_params(cfg.model, cfg.seed), vocab=vocab)
    chains = _mode_chains(cfg.seed + 1)
    rng = np.random.default_rng(cfg.seed + 2)

    names = sorted(model.params)
    m = {k: np.zeros_like(model.params[k]) for k in names}
    v = {k: np.zeros_like(model.params[k]) for k in names}
    for step in range(1, cfg.steps + 1):
        batch = _batch(chains, cfg, vocab, rng)
        E = np.stack([model.embed_tokens(row[:-1]) for row in batch])
        logits, cache = model.forward(E, want_cache=True)
        loss, dlogits = _xent_and_dlogits(logits, batch[:, 1:])
        if not np.isfinite(loss):
            raise TrainingDiverged(f"loss {loss} at step {step}")
        dE, grads = model.backward(dlogits, cache, want_param_grads=True)
        # token embedding gradient: scatter-add dE rows back to wte
        wte_grad = np.zeros_like(model.params["wte"])
        np.add.at(wte_grad, batch[:, :-1].ravel(), dE.reshape(-1, cfg.model.d_model))
        grads["wte"] = grads.get("wte", 0.0) + wte_grad

        gnorm = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
        scale = min(1.0, cfg.grad_clip / (gnorm + 1e-12))
        for k in names:
            g = grads.get(k)
            if g is None:
                continue
            g = g * scale
            m[k] = cfg.beta1 * m[k] + (1 - cfg.beta1) * g
            v[k] = cfg.beta2 * v[k] + (1 - cfg.beta2) * g * g
            mhat = m[k] / (1 - cfg.beta1 ** step)
            vhat = v[k] / (1 - cfg.beta2 ** step)
            model.params[k] -= cfg.lr * (
                mhat / (np.sqrt(vhat) + 1e-8) + cfg.weight_decay * model.params[k]
            )
        if log_every and step % log_every == 0:
            print(f"step {step:5d}  loss {loss:.4f}")
    return model


def eval_prompts(n: int, seed: int, body_chars: int = 4):
    """Seeded prompt set: mode header plus a few on-chain body bytes."""
    chains = _mode_chains(seed + 1)
    rng = np.random.default_rng(seed + 17)
    prompts = []
    for _ in range(n):
        mode = int(rng.integers(0, N_MODES))
        body = _sample_chain(chains[mode], body_chars, rng)
        prompts.append(bytes(list(mode_header(mode)) + body))
    return prompts


def distill_corpus(model, n_samples: int, seed: int, response_len: int = 24,
                   prompt_body: int = 4):
    """(prompt tokens, response tokens) pairs for bridge training, with
    responses sampled from the model's own full-context distribution."""
    from .sampling import SamplerConfig, dist_from_logits, sample_multinomial

    rng = np.random.default_rng(seed)
    scfg = SamplerConfig(temperature=1.0, top_p=1.0)
    chains = _mode_chains(seed + 1)
    vocab = model.vocab
    samples = []
    for _ in range(n_samples):
        mode = int(rng.integers(0, N_MODES))
        body = _sample_chain(chains[mode], prompt_body, rng)
        prompt = [vocab.bos_id] + list(mode_header(mode)) + body
        generated = []
        for _ in range(response_len):
            dist = dist_from_logits(model.next_logits(prompt + generated), scfg)
            token = sample_multinomial(dist, rng)
            if token == vocab.eos_id:
                break
            generated.append(token)
        if len(generated) >= 2:
            samples.append((prompt, generated))
    return samples
