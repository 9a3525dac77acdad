"""Context-window assembly.

Three policies govern what the model sees at generation step t:

* full  -- prompt followed by everything generated so far,
* basic -- the last w tokens of (prompt + generated), nothing anchored,
* asw   -- prompt, then a fixed bridge segment, then the last w generated
           tokens.  The bridge is byte/value-identical at every step and
           for every generated content, so nothing outside the latest w
           generated tokens can reach the model through it.

The bridge segment is either hard (vocabulary tokens, token path) or soft
(a trainable embedding matrix, embedding path).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ShapeError, UseEmbeddingPath
from .vocab import Vocabulary

BRIDGE_MAGIC = b"ASWB"

FULL = "full"
BASIC = "basic"
ASW = "asw"

ALWAYS = "always"
AFTER_OVERFLOW = "after_overflow"


@dataclass(frozen=True)
class BridgeContext:
    """Hard (token list) or soft (l_bridge x e embedding matrix) bridge."""

    tokens: Optional[tuple] = None
    theta: Optional[np.ndarray] = None

    def __post_init__(self):
        if (self.tokens is None) == (self.theta is None):
            raise ShapeError("bridge must be exactly one of hard tokens / soft matrix")
        if self.theta is not None and not np.all(np.isfinite(self.theta)):
            raise ShapeError("soft bridge matrix must be finite")

    @property
    def is_soft(self) -> bool:
        return self.theta is not None

    def __len__(self):
        return len(self.tokens) if self.tokens is not None else self.theta.shape[0]


@dataclass(frozen=True)
class WindowPolicy:
    kind: str = FULL
    w: int = 10
    bridge: Optional[BridgeContext] = None
    bridge_activation: str = ALWAYS

    def __post_init__(self):
        if self.kind not in (FULL, BASIC, ASW):
            raise ShapeError(f"unknown window kind {self.kind!r}")
        if self.w < 1:
            raise ShapeError("w must be >= 1")
        if self.kind == ASW and self.bridge is None:
            raise ShapeError("asw policy requires a bridge context")
        if self.kind == BASIC and self.bridge is not None:
            raise ShapeError("basic policy takes no bridge")
        if self.bridge_activation not in (ALWAYS, AFTER_OVERFLOW):
            raise ShapeError(f"unknown activation {self.bridge_activation!r}")


def _bridge_active(policy: WindowPolicy, gen_len: int) -> bool:
    if policy.kind != ASW or policy.bridge is None or len(policy.bridge) == 0:
        return False
    if policy.bridge_activation == AFTER_OVERFLOW and gen_len <= policy.w:
        return False
    return True


def build_token_window(prompt, generated, policy: WindowPolicy) -> list:
    """Token-level window for full/basic/asw-with-hard-bridge policies."""
    prompt = list(prompt)
    generated = list(generated)
    if policy.kind == FULL:
        return prompt + generated
    if policy.kind == BASIC:
        return (prompt + generated)[-policy.w:]
    if policy.bridge is not None and policy.bridge.is_soft:
        raise UseEmbeddingPath("soft bridge requires build_embedding_window")
    latest = generated[-policy.w:] if generated else []
    bridge = list(policy.bridge.tokens) if _bridge_active(policy, len(generated)) else []
    return prompt + bridge + latest


def build_embedding_window(prompt, generated, policy: WindowPolicy, model) -> np.ndarray:
    """Embedding-level window; required for a soft bridge, valid for any
    policy (hard segments pass through the embedding table)."""
    if policy.kind == ASW and policy.bridge is not None and policy.bridge.is_soft:
        theta = policy.bridge.theta
        if theta.ndim != 2 or theta.shape[1] != model.cfg.d_model:
            raise ShapeError(
                f"soft bridge must be (l_bridge, {model.cfg.d_model})"
            )
        generated = list(generated)
        latest = generated[-policy.w:] if generated else []
        parts = [model.embed_tokens(prompt)]
        if _bridge_active(policy, len(generated)):
            parts.append(theta)
        parts.append(model.embed_tokens(latest))
        return np.concatenate(parts, axis=0)
    return model.embed_tokens(build_token_window(prompt, generated, policy))


def window_dependency_set(policy: WindowPolicy, t: int, gen_len: int) -> set:
    """Indices of *generated* tokens that step-t inference reads.  The
    prompt and bridge are attack-immune and never appear here."""
    if not 0 <= t <= gen_len:
        raise ShapeError(f"step {t} outside [0, {gen_len}]")
    if policy.kind == FULL:
        return set(range(t))
    return set(range(max(0, t - policy.w), t))


def save_bridge(theta: np.ndarray, path):
    """Soft-bridge checkpoint: magic, l_bridge u32, e u32, row-major f64."""
    if theta.ndim != 2:
        raise ShapeError("soft bridge must be a 2-D matrix")
    with open(path, "wb") as fh:
        fh.write(BRIDGE_MAGIC)
        fh.write(struct.pack("<2I", theta.shape[0], theta.shape[1]))
        fh.write(np.ascontiguousarray(theta, dtype="<f8").tobytes())


def load_bridge(path) -> np.ndarray:
    with open(path, "rb") as fh:
        if fh.read(4) != BRIDGE_MAGIC:
            raise ShapeError("bad soft-bridge magic")
        l_bridge, e = struct.unpack("<2I", fh.read(8))
        buf = fh.read(l_bridge * e * 8)
        if len(buf) != l_bridge * e * 8:
            raise ShapeError("truncated soft-bridge file")
    return np.frombuffer(buf, dtype="<f8").reshape(l_bridge, e).copy()
