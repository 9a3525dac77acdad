"""Imperceptibility and text-quality measurement.

Security is measured against the model's own unconstrained behaviour: at
every step of a trajectory sampled from the full-context distribution,
the windowed distribution is compared to the full-context one over the
same prefix.  Per-step KL divergences (nats) accumulate into a
total-variation bound via Pinsker's inequality,

    TV <= sqrt( (ln 2 / 2) * sum_t KL_t[bits] ) = sqrt( (1/2) * sum_t KL_t[nats] ).

Both distributions are taken pre-truncation (top_p = 1) so the comparison
sees the full vocabulary.  Surface-quality metrics (perplexity delta,
2-gram BLEU, ROUGE-L) are the usual corpus formulas on byte tokens.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShapeError
from .sampling import ProbDist, SamplerConfig, dist_from_logits, sample_multinomial
from .window import FULL, WindowPolicy, build_embedding_window, build_token_window

_EPS = 1e-300
LN2 = float(np.log(2.0))


def stepwise_kl(p_full: ProbDist, p_window: ProbDist) -> float:
    """KL(p_full || p_window) in nats; infinity (reported, not raised) when
    the window distribution lacks mass the full one has."""
    pp = np.asarray(p_full.probs, dtype=np.float64)
    qq = np.asarray(p_window.probs, dtype=np.float64)
    if pp.shape != qq.shape:
        raise ShapeError(f"mismatched vocabularies {pp.shape} vs {qq.shape}")
    mask = pp > 0
    if np.any(qq[mask] <= 0):
        return float("inf")
    return float((pp[mask] * np.log(pp[mask] / qq[mask])).sum())


def tvd(p: ProbDist, q: ProbDist) -> float:
    """Total variation distance, (1/2) * L1."""
    pp = np.asarray(p.probs, dtype=np.float64)
    qq = np.asarray(q.probs, dtype=np.float64)
    if pp.shape != qq.shape:
        raise ShapeError(f"mismatched vocabularies {pp.shape} vs {qq.shape}")
    return float(0.5 * np.abs(pp - qq).sum())


@dataclass
class KLTrace:
    """Per-step KL divergences (nats) along one trajectory."""

    per_step_nats: np.ndarray

    def __post_init__(self):
        self.per_step_nats = np.asarray(self.per_step_nats, dtype=np.float64)
        if self.per_step_nats.size and np.any(self.per_step_nats < -1e-12):
            raise DomainError("KL values must be non-negative")

    @property
    def steps(self) -> int:
        return int(self.per_step_nats.size)

    @property
    def total_nats(self) -> float:
        return float(self.per_step_nats.sum())

    @property
    def mean_nats(self) -> float:
        return float(self.per_step_nats.mean()) if self.per_step_nats.size else 0.0


def pinsker_bound(trace) -> float:
    """sqrt((ln2/2) * total KL in bits); accepts a KLTrace or a nat total."""
    total_nats = trace.total_nats if isinstance(trace, KLTrace) else float(trace)
    if total_nats < 0:
        raise DomainError("KL total must be non-negative")
    return float(np.sqrt(0.5 * total_nats))


def _full_vocab_dist(model, prompt_tokens, generated, policy, temperature):
    cfg = SamplerConfig(temperature=temperature, top_p=1.0)
    if policy.kind == "asw" and policy.bridge is not None and policy.bridge.is_soft:
        E = build_embedding_window(prompt_tokens, generated, policy, model)
        logits = model.next_logits_emb(E)
    else:
        ctx = build_token_window(prompt_tokens, generated, policy)
        logits = model.next_logits(ctx)
    return dist_from_logits(logits, cfg)


def avg_kl_run(
    model,
    prompt_tokens,
    policy: WindowPolicy,
    max_len: int = 64,
    temperature: float = 1.0,
    seed: int = 0,
    stop_at_eos: bool = True,
) -> KLTrace:
    """Sample a trajectory from the full-context distribution and record, at
    every step, KL(full || windowed) over the same generated prefix."""
    full_policy = WindowPolicy(kind=FULL, w=max(policy.w, 1))
    rng = np.random.default_rng(seed)
    generated = []
    steps = []
    eos = getattr(model.vocab, "eos_id", None)
    for _ in range(max_len):
        p_full = _full_vocab_dist(model, prompt_tokens, generated, full_policy, temperature)
        p_win = _full_vocab_dist(model, prompt_tokens, generated, policy, temperature)
        steps.append(stepwise_kl(p_full, p_win))
        token = sample_multinomial(p_full, rng)
        if stop_at_eos and token == eos:
            break
        generated.append(token)
    return KLTrace(per_step_nats=np.asarray(steps, dtype=np.float64))


def kl_tvd_run(model, prompt_tokens, policy, max_len=64, temperature=1.0, seed=0):
    """Like avg_kl_run, additionally returning per-step TVD(full, windowed)."""
    full_policy = WindowPolicy(kind=FULL, w=max(policy.w, 1))
    rng = np.random.default_rng(seed)
    generated = []
    kls, tvds = [], []
    eos = getattr(model.vocab, "eos_id", None)
    for _ in range(max_len):
        p_full = _full_vocab_dist(model, prompt_tokens, generated, full_policy, temperature)
        p_win = _full_vocab_dist(model, prompt_tokens, generated, policy, temperature)
        kls.append(stepwise_kl(p_full, p_win))
        tvds.append(tvd(p_full, p_win))
        token = sample_multinomial(p_full, rng)
        if token == eos:
            break
        generated.append(token)
    return KLTrace(per_step_nats=np.asarray(kls)), np.asarray(tvds, dtype=np.float64)


# ---------------------------------------------------------------------------
# perplexity


def sequence_nll(model, prompt_tokens, tokens, policy: WindowPolicy) -> float:
    """Total negative log likelihood (nats) of the tokens under the policy's
    window, before any truncation."""
    total = 0.0
    for t, token in enumerate(tokens):
        p = _full_vocab_dist(model, prompt_tokens, list(tokens[:t]), policy, 1.0)
        total += -float(np.log(max(p.probs[token], _EPS)))
    return total


def perplexity(model, prompt_tokens, tokens, policy=None) -> float:
    if not len(tokens):
        raise DomainError("perplexity undefined for an empty sequence")
    if policy is None:
        policy = WindowPolicy(kind=FULL, w=1)
    return float(np.exp(sequence_nll(model, prompt_tokens, tokens, policy) / len(tokens)))


def delta_ppl(ref_ppls, stego_ppls) -> float:
    """Absolute difference of mean perplexities between two run sets."""
    ref = np.asarray(list(ref_ppls), dtype=np.float64)
    stego = np.asarray(list(stego_ppls), dtype=np.float64)
    if ref.size == 0 or stego.size == 0:
        raise DomainError("both run sets must be non-empty")
    return float(abs(ref.mean() - stego.mean()))


# ---------------------------------------------------------------------------
# surface-overlap metrics


def _ngram_counts(seq, n):
    counts = {}
    for i in range(len(seq) - n + 1):
        g = tuple(seq[i:i + n])
        counts[g] = counts.get(g, 0) + 1
    return counts


def bleu2(reference, candidate) -> float:
    """Sentence BLEU from 1- and 2-gram clipped precision with the standard
    brevity penalty; zero when either modified precision is zero."""
    reference = list(reference)
    candidate = list(candidate)
    if not candidate:
        return 0.0
    precisions = []
    for n in (1, 2):
        cand = _ngram_counts(candidate, n)
        ref = _ngram_counts(reference, n)
        overlap = sum(min(c, ref.get(g, 0)) for g, c in cand.items())
        total = sum(cand.values())
        if total == 0 or overlap == 0:
            return 0.0
        precisions.append(overlap / total)
    geo = float(np.exp(0.5 * (np.log(precisions[0]) + np.log(precisions[1]))))
    c, r = len(candidate), len(reference)
    bp = 1.0 if c >= r else float(np.exp(1 - r / c))
    return bp * geo


def _lcs_length(a, b) -> int:
    # single-row DP
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[-1]))
        prev = cur
    return prev[-1]


def rouge_l(reference, candidate) -> float:
    """ROUGE-L F1 (beta = 1) from the longest common subsequence."""
    reference = list(reference)
    candidate = list(candidate)
    if not candidate or not reference:
        return 0.0
    lcs = _lcs_length(candidate, reference)
    if lcs == 0:
        return 0.0
    prec = lcs / len(candidate)
    rec = lcs / len(reference)
    return 2 * prec * rec / (prec + rec)
