"""Logit post-processing: temperature, top-p truncation, multinomial draws."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError


@dataclass(frozen=True)
class SamplerConfig:
    temperature: float = 1.0
    top_p: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must lie in (0, 1]")


@dataclass
class ProbDist:
    """A next-token distribution, possibly truncated to a support set.

    probs always has full vocabulary length; entries outside the support
    are zero.  support is a strictly increasing array of retained ids.
    """

    probs: np.ndarray
    support: np.ndarray

    def __post_init__(self):
        s = float(self.probs.sum())
        if abs(s - 1.0) > 1e-9:
            raise ShapeError(f"probabilities sum to {s}, not 1")


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    e = np.exp(z)
    return e / e.sum()


def dist_from_logits(logits: np.ndarray, cfg: SamplerConfig) -> ProbDist:
    """softmax(l / temperature), truncated to the smallest prefix of
    descending-probability tokens whose cumulative mass reaches top_p,
    then renormalized.  Ratios inside the retained support are preserved."""
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise ShapeError("logits must be finite")
    p = softmax(logits / cfg.temperature)
    if cfg.top_p >= 1.0:
        return ProbDist(probs=p, support=np.arange(p.size))
    # stable ordering: descending probability, ties broken by lower id
    order = np.lexsort((np.arange(p.size), -p))
    csum = np.cumsum(p[order])
    cut = int(np.searchsorted(csum, cfg.top_p - 1e-12)) + 1
    keep = np.sort(order[:cut])
    probs = np.zeros_like(p)
    probs[keep] = p[keep] / p[keep].sum()
    return ProbDist(probs=probs, support=keep)


def sample_multinomial(dist: ProbDist, rng: np.random.Generator) -> int:
    """One draw from the distribution; RNG state is caller-owned."""
    u = rng.random()
    csum = np.cumsum(dist.probs[dist.support])
    idx = int(np.searchsorted(csum, u, side="right"))
    idx = min(idx, dist.support.size - 1)
    return int(dist.support[idx])
