"""Robustness accounting: closed-form expectation and attack simulation.

The closed form gives the expected number of generation positions whose
next-token inference reads at least one of m uniformly chosen modified
tokens, for a left-context window of size w over T generated tokens:

    E = (T-1) - [ sum_{i=1..min(w,T-1)} C(T-i, m)
                  + max(0, T-1-w) * C(T-w, m) ] / C(T, m)

with C(a, b) = 0 whenever b > a.  Position 0 has no left context and is
never influenced.  All internal arithmetic is exact (rationals); the brute
force enumerates every m-subset and is the oracle the closed form is
checked against.

The simulator applies real attacks to a real stegotext and re-runs
inference under the session's window policy.  "Influenced" is decided at
the distribution level: a position is unaffected iff its quantized
distribution is byte-identical to the unattacked run's.  Bit-level effects
depend on the coder state carried across steps and can mask influence,
which is why the distribution is the right method-agnostic proxy.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction
from math import comb
from typing import Optional

import numpy as np

from .codec import StegoSession, run_quantdists
from .errors import DomainError, TooLarge
from .vocab import NUM_BYTES, tokenize
from .window import FULL, _bridge_active, build_token_window

SUBSTITUTE = "substitute"
DELETE = "delete"
INSERT = "insert"

_BRUTE_FORCE_LIMIT = 10 ** 6


def _check_args(T, m, w):
    if T < 1 or w < 1 or not 0 <= m <= T:
        raise DomainError(f"invalid (T={T}, m={m}, w={w})")


def expected_influenced_exact(T: int, m: int, w: int) -> Fraction:
    """Closed-form expected influenced positions, as an exact rational."""
    _check_args(T, m, w)
    denom = comb(T, m)
    s = sum(comb(T - i, m) for i in range(1, min(w, T - 1) + 1))
    tail = max(0, T - 1 - w) * comb(max(T - w, 0), m)
    return Fraction(T - 1) - Fraction(s + tail, denom)


def expected_influenced(T: int, m: int, w: int) -> float:
    return float(expected_influenced_exact(T, m, w))


def influenced_delta_exact(T: int, m: int, w: int) -> Fraction:
    """Forward difference E(w+1) - E(w); non-negative, zero exactly when
    m = 0 or m > T - w."""
    _check_args(T, m, w)
    if not 1 <= w <= T - 2:
        raise DomainError(f"w={w} outside [1, {T - 2}]")
    if m < 1 or m - 1 > T - w - 1:
        return Fraction(0)
    return Fraction((T - w - 1) * comb(T - w - 1, m - 1), comb(T, m))


def influenced_delta(T: int, m: int, w: int) -> float:
    return float(influenced_delta_exact(T, m, w))


def brute_force_E(T: int, m: int, w: int) -> Fraction:
    """Oracle: average influenced-position count over every m-subset."""
    _check_args(T, m, w)
    n_subsets = comb(T, m)
    if n_subsets > _BRUTE_FORCE_LIMIT:
        raise TooLarge(f"C({T},{m}) = {n_subsets} subsets is too many")
    # window ranges as bitmasks: position i reads generated tokens
    # max(0, i-w) .. i-1
    window_masks = []
    for i in range(1, T):
        lo = max(0, i - w)
        mask = 0
        for j in range(lo, i):
            mask |= 1 << j
        window_masks.append(mask)
    total = 0
    for subset in itertools.combinations(range(T), m):
        chosen = 0
        for j in subset:
            chosen |= 1 << j
        for mask in window_masks:
            if chosen & mask:
                total += 1
    return Fraction(total, n_subsets)


# ---------------------------------------------------------------------------
# simulation


@dataclass(frozen=True)
class AttackSpec:
    kind: str = SUBSTITUTE
    m: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.kind not in (SUBSTITUTE, DELETE, INSERT):
            raise DomainError(f"unknown attack kind {self.kind!r}")
        if self.m < 0:
            raise DomainError("m must be >= 0")


@dataclass
class RobustnessReport:
    T: int
    w: int
    m: int
    kind: str
    trials: int
    unaffected_ratio: float
    mc_influenced_mean: float
    mc_influenced_stderr: float
    closed_form_E: Optional[float] = None

    def to_dict(self):
        return dict(
            T=self.T, w=self.w, m=self.m, kind=self.kind, trials=self.trials,
            unaffected_ratio=self.unaffected_ratio,
            mc_influenced_mean=self.mc_influenced_mean,
            mc_influenced_stderr=self.mc_influenced_stderr,
            closed_form_E=self.closed_form_E,
        )


def _attack_token(rng, vocab, exclude=None):
    while True:
        tok = int(rng.integers(0, NUM_BYTES))
        if tok != exclude:
            return tok


def apply_attack(tokens, spec: AttackSpec, vocab, rng):
    """Returns (attacked tokens, index_map) where index_map[i] is the
    attacked-sequence position of original position i, or None if the
    original position no longer exists."""
    tokens = list(tokens)
    T = len(tokens)
    if spec.kind == SUBSTITUTE:
        if spec.m > T:
            raise DomainError("cannot substitute more tokens than exist")
        chosen = rng.choice(T, size=spec.m, replace=False) if spec.m else []
        attacked = list(tokens)
        for j in chosen:
            attacked[int(j)] = _attack_token(rng, vocab, exclude=tokens[int(j)])
        return attacked, {i: i for i in range(T)}
    if spec.kind == DELETE:
        if spec.m > T:
            raise DomainError("cannot delete more tokens than exist")
        chosen = set(int(j) for j in rng.choice(T, size=spec.m, replace=False))
        attacked, index_map, k = [], {}, 0
        for i, tok in enumerate(tokens):
            if i in chosen:
                index_map[i] = None
            else:
                attacked.append(tok)
                index_map[i] = k
                k += 1
        return attacked, index_map
    # insert: m slots drawn with replacement over [0, T]
    slots = sorted(int(s) for s in rng.integers(0, T + 1, size=spec.m))
    attacked = list(tokens)
    index_map = {i: i for i in range(T)}
    for n_done, slot in enumerate(slots):
        pos = slot + n_done
        attacked.insert(pos, _attack_token(rng, vocab))
        for i in range(T):
            if index_map[i] >= pos:
                index_map[i] += 1
    return attacked, index_map


def _window_signature(session, generated, t):
    return tuple(build_token_window(session.prompt_tokens, generated[:t], session.policy))


def simulate_attack(
    session: StegoSession,
    stegotext,
    spec: AttackSpec,
    trials: int = 1000,
    baseline_qds=None,
) -> RobustnessReport:
    """Monte Carlo unaffected-inference ratio for one stegotext.

    Attacks touch only the generated tokens; the prompt and bridge are
    held by both parties and cannot be altered in transit (asserted by
    construction here: only the token list is attacked).

    Window determinism gives a fast path: if the assembled window at a
    position is identical to the unattacked one, the distribution is
    identical and no re-inference is needed.  Re-inference happens exactly
    where windows differ.
    """
    tokens = tokenize(stegotext, session.vocab) if isinstance(stegotext, (bytes, str)) \
        else list(stegotext)
    T = len(tokens)
    if T == 0:
        raise DomainError("empty stegotext")
    if spec.kind == DELETE and spec.m > T:
        raise DomainError("m exceeds stegotext length")
    soft = session._uses_embedding_path()
    if baseline_qds is None:
        baseline_qds = run_quantdists(session, tokens)
    base_keys = [qd.key() for qd in baseline_qds]
    base_sigs = None if soft else [_window_signature(session, tokens, t) for t in range(T)]

    influenced_counts = []
    unaffected_ratios = []
    for trial in range(trials):
        rng = np.random.default_rng((spec.seed, trial))
        attacked, index_map = apply_attack(tokens, spec, session.vocab, rng)
        n_positions = len(attacked)
        unaffected = 0
        influenced = 0
        for i in range(T):
            k = index_map[i]
            if k is None:  # deleted positions count as affected
                influenced += 1
                continue
            if soft:
                pol = session.policy
                same_window = (
                    attacked[max(0, k - pol.w): k] == tokens[max(0, i - pol.w): i]
                    and _bridge_active(pol, k) == _bridge_active(pol, i)
                )
            else:
                same_window = _window_signature(session, attacked, k) == base_sigs[i]
            if same_window:
                unaffected += 1
                continue
            qd = session.step_quantdist(attacked[:k])
            if qd.key() == base_keys[i]:
                unaffected += 1
            else:
                influenced += 1
        if spec.kind == DELETE:
            n_positions = T  # deleted originals stay in the denominator
        influenced_counts.append(influenced)
        unaffected_ratios.append(unaffected / n_positions)

    counts = np.asarray(influenced_counts, dtype=np.float64)
    stderr = float(counts.std(ddof=1) / np.sqrt(trials)) if trials > 1 else 0.0
    closed = None
    if spec.kind == SUBSTITUTE:
        w_eff = T if session.policy.kind == FULL else session.policy.w
        closed = expected_influenced(T, spec.m, max(1, min(w_eff, T)))
    return RobustnessReport(
        T=T,
        w=session.policy.w,
        m=spec.m,
        kind=spec.kind,
        trials=trials,
        unaffected_ratio=float(np.mean(unaffected_ratios)),
        mc_influenced_mean=float(counts.mean()),
        mc_influenced_stderr=stderr,
        closed_form_E=closed,
    )
