"""Bit-exact steganographic arithmetic coding.

Embedding runs an arithmetic *decoder* over the secret bitstream: the
stream picks, at every generation step, the token whose cumulative
frequency subinterval contains the current code point.  Extraction runs
the matching arithmetic *encoder* over the observed tokens and re-emits
the exact bits the embedder consumed.  Both sides narrow an identical
64-bit integer interval from an identical quantized distribution, so the
construction is invertible with zero bit errors as long as the stegotext
is untouched and the two sessions agree.

The coder is a classic binary range coder: top-bit renormalization with
underflow (straddle) counting, 64-bit low/high bounds, and integer
frequency tables summing to exactly 2**Q.  Floating-point coders cannot
guarantee cross-process symmetry; this one can.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import (
    CapacityExhausted,
    DomainError,
    ExtractionDesync,
    FramingError,
    PrecisionExhausted,
    ShapeError,
)
from .sampling import ProbDist, SamplerConfig, dist_from_logits
from .vocab import Vocabulary, detokenize, tokenize
from .window import ASW, WindowPolicy, build_embedding_window, build_token_window

STATE_SIZE = 64
_MASK = (1 << STATE_SIZE) - 1
_TOP = 1 << (STATE_SIZE - 1)
_SECOND = 1 << (STATE_SIZE - 2)

HEADER_BITS = 32
DEFAULT_Q = 30


# ---------------------------------------------------------------------------
# quantized distributions


@dataclass
class QuantDist:
    """Integer frequency table over the support, summing to exactly 2**Q."""

    support: np.ndarray
    freq: np.ndarray
    q_bits: int

    @property
    def cumfreq(self) -> np.ndarray:
        return np.concatenate(([0], np.cumsum(self.freq)))

    def index_of(self, token: int) -> int:
        i = int(np.searchsorted(self.support, token))
        if i >= self.support.size or self.support[i] != token:
            return -1
        return i

    def key(self) -> bytes:
        return (
            self.support.astype("<i8").tobytes()
            + self.freq.astype("<i8").tobytes()
        )


def quantize(dist: ProbDist, q_bits: int = DEFAULT_Q) -> QuantDist:
    """Largest-remainder apportionment of 2**Q among the support tokens.

    Every retained token keeps frequency >= 1 so the extractor never meets
    a zero-width interval for a token it actually observes.  Remainder ties
    break toward the lower token id; the whole procedure is deterministic.
    """
    support = dist.support
    total = 1 << q_bits
    if support.size > total:
        raise PrecisionExhausted(
            f"support of {support.size} exceeds 2^{q_bits} frequency budget"
        )
    p = dist.probs[support]
    p = p / p.sum()
    quota = p * total
    freq = np.floor(quota).astype(np.int64)
    rem = quota - freq
    short = int(total - freq.sum())
    if short > 0:
        order = np.lexsort((np.arange(rem.size), -rem))
        freq[order[:short]] += 1
    elif short < 0:
        order = np.lexsort((np.arange(rem.size), rem))
        freq[order[:-short]] -= 1
    # float rounding can zero out tiny probabilities; restore the floor
    zero = np.flatnonzero(freq == 0)
    for z in zero:
        donor = int(np.argmax(freq))
        if freq[donor] < 2:
            raise PrecisionExhausted("cannot grant minimum frequency 1")
        freq[donor] -= 1
        freq[z] = 1
    assert int(freq.sum()) == total
    return QuantDist(support=support.copy(), freq=freq, q_bits=q_bits)


# ---------------------------------------------------------------------------
# bit stream with framing


class BitStream:
    """Secret-message bit source: 32-bit big-endian payload-length header,
    the payload bits, then an endless run of seeded pseudorandom filler."""

    def __init__(self, payload_bits, filler_seed: int):
        payload_bits = [int(b) for b in payload_bits]
        if any(b not in (0, 1) for b in payload_bits):
            raise FramingError("payload bits must be 0/1")
        if len(payload_bits) >= 1 << HEADER_BITS:
            raise FramingError("payload too long for 32-bit header")
        header = [(len(payload_bits) >> (HEADER_BITS - 1 - i)) & 1
                  for i in range(HEADER_BITS)]
        self._fixed = header + payload_bits
        self._filler = filler_bit_generator(filler_seed)
        self.cursor = 0

    @property
    def framed_length(self) -> int:
        return len(self._fixed)

    def read(self) -> int:
        if self.cursor < len(self._fixed):
            bit = self._fixed[self.cursor]
        else:
            bit = next(self._filler)
        self.cursor += 1
        return bit


def filler_bit_generator(seed: int):
    """Endless deterministic bits from a counter-based (Philox) generator."""
    rng = np.random.Generator(np.random.Philox(key=seed))
    while True:
        for byte in rng.integers(0, 256, size=512, dtype=np.uint16):
            for i in range(7, -1, -1):
                yield int((byte >> i) & 1)


def bytes_to_bits(data: bytes) -> list:
    return [(byte >> i) & 1 for byte in data for i in range(7, -1, -1)]


def bits_to_bytes(bits) -> bytes:
    bits = list(bits)
    if len(bits) % 8:
        bits = bits + [0] * (8 - len(bits) % 8)
    out = bytearray()
    for i in range(0, len(bits), 8):
        byte = 0
        for b in bits[i:i + 8]:
            byte = (byte << 1) | int(b)
        out.append(byte)
    return bytes(out)


# ---------------------------------------------------------------------------
# range coder


class _CoderBase:
    def __init__(self):
        self.low = 0
        self.high = _MASK

    def _narrow(self, qd: QuantDist, index: int):
        total = 1 << qd.q_bits
        cum = qd.cumfreq
        span = self.high - self.low + 1
        sym_lo = int(cum[index])
        sym_hi = int(cum[index + 1])
        new_low = self.low + sym_lo * span // total
        new_high = self.low + sym_hi * span // total - 1
        self.low, self.high = new_low, new_high
        while True:
            if ((self.low ^ self.high) & _TOP) == 0:
                self._shift()
                self.low = (self.low << 1) & _MASK
                self.high = ((self.high << 1) & _MASK) | 1
            elif (self.low & ~self.high & _SECOND) != 0:
                self._underflow()
                self.low = (self.low << 1) & (_MASK >> 1)
                self.high = ((self.high << 1) & (_MASK >> 1)) | _TOP | 1
            else:
                break
        assert self.low < self.high

    def _shift(self):
        raise NotImplementedError

    def _underflow(self):
        raise NotImplementedError


class StreamDecoder(_CoderBase):
    """Embedding side: turns the secret bitstream into token choices."""

    def __init__(self, stream: BitStream):
        super().__init__()
        self.stream = stream
        self.code = 0
        for _ in range(STATE_SIZE):
            self.code = (self.code << 1) | stream.read()

    def decode_symbol(self, qd: QuantDist) -> int:
        total = 1 << qd.q_bits
        span = self.high - self.low + 1
        value = ((self.code - self.low + 1) * total - 1) // span
        cum = qd.cumfreq
        index = int(np.searchsorted(cum, value, side="right")) - 1
        index = min(max(index, 0), qd.support.size - 1)
        self._narrow(qd, index)
        return int(qd.support[index])

    def _shift(self):
        self.code = ((self.code << 1) & _MASK) | self.stream.read()

    def _underflow(self):
        self.code = (
            (self.code & _TOP)
            | ((self.code << 1) & (_MASK >> 1))
            | self.stream.read()
        )


class TokenEncoder(_CoderBase):
    """Extraction side: replays token choices, re-emitting the bitstream.

    Mirrors StreamDecoder state-for-state; after encoding the same token
    sequence against the same distributions, ``emitted`` is a prefix of the
    bits the decoder consumed.  Bits held back by an unresolved underflow
    run are not emitted (they are not yet committed)."""

    def __init__(self):
        super().__init__()
        self.emitted = []
        self._pending = 0

    def encode_symbol(self, qd: QuantDist, token: int):
        index = qd.index_of(token)
        if index < 0:
            raise ExtractionDesync(step=None, token=token)
        self._narrow(qd, index)

    def _shift(self):
        bit = self.low >> (STATE_SIZE - 1)
        self.emitted.append(bit)
        self.emitted.extend([bit ^ 1] * self._pending)
        self._pending = 0

    def _underflow(self):
        self._pending += 1

    @property
    def bits_committed(self) -> int:
        return len(self.emitted)


def ac_embed_step(qd: QuantDist, decoder: StreamDecoder) -> int:
    """One embedding step: pick the support token whose subinterval holds
    the stream-determined code point and narrow the shared interval."""
    return decoder.decode_symbol(qd)


def ac_extract_step(qd: QuantDist, token: int, encoder: TokenEncoder) -> list:
    """One extraction step: exact inverse of ac_embed_step.  Returns the
    bits newly committed by this token."""
    before = encoder.bits_committed
    encoder.encode_symbol(qd, token)
    return encoder.emitted[before:]


def _drop_token(dist: ProbDist, token: int) -> ProbDist:
    """Remove one token from the support and renormalize.  Both endpoints
    must apply the same removal or their coders diverge."""
    i = int(np.searchsorted(dist.support, token))
    if i >= dist.support.size or dist.support[i] != token:
        return dist
    if dist.support.size == 1:
        raise ShapeError("cannot drop the only supported token")
    support = np.delete(dist.support, i)
    probs = dist.probs.copy()
    probs[token] = 0.0
    probs /= probs.sum()
    return ProbDist(probs=probs, support=support)


# ---------------------------------------------------------------------------
# sessions


@dataclass
class StegoSession:
    """Everything Alice and Bob must agree on, bound to a loaded model."""

    model: object
    prompt: bytes
    policy: WindowPolicy
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    coder_q: int = DEFAULT_Q
    prng_seed: int = 0
    max_len: int = 512
    forbid_eos: bool = False

    def __post_init__(self):
        self.vocab: Vocabulary = self.model.vocab
        prompt_bytes = self.prompt
        if isinstance(prompt_bytes, str):
            prompt_bytes = prompt_bytes.encode("utf-8")
        self.prompt_tokens = [self.vocab.bos_id] + tokenize(prompt_bytes, self.vocab)

    def _uses_embedding_path(self) -> bool:
        return (
            self.policy.kind == ASW
            and self.policy.bridge is not None
            and self.policy.bridge.is_soft
        )

    def step_dist(self, generated) -> ProbDist:
        if self._uses_embedding_path():
            E = build_embedding_window(self.prompt_tokens, generated, self.policy, self.model)
            logits = self.model.next_logits_emb(E)
        else:
            ctx = build_token_window(self.prompt_tokens, generated, self.policy)
            logits = self.model.next_logits(ctx)
        dist = dist_from_logits(logits, self.sampler)
        if self.forbid_eos:
            dist = _drop_token(dist, self.vocab.eos_id)
        return dist

    def step_quantdist(self, generated) -> QuantDist:
        return quantize(self.step_dist(generated), self.coder_q)

    def window_hash(self, generated) -> str:
        if self._uses_embedding_path():
            E = build_embedding_window(self.prompt_tokens, generated, self.policy, self.model)
            blob = np.ascontiguousarray(E, dtype="<f8").tobytes()
        else:
            ctx = build_token_window(self.prompt_tokens, generated, self.policy)
            blob = np.asarray(ctx, dtype="<i8").tobytes()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class StepTrace:
    t: int
    window_hash: str
    support_size: int
    token: int
    bits_committed: int


@dataclass
class EmbedResult:
    stegotext: bytes
    tokens: list
    bits_committed: int
    payload_length: int
    ended_by_eos: bool
    trace: Optional[list] = None

    @property
    def capacity(self) -> float:
        """Committed (payload + filler) bits per generated token."""
        if not self.tokens:
            raise DomainError("capacity undefined for an empty generation")
        return self.bits_committed / len(self.tokens)


@dataclass
class ExtractResult:
    payload_bits: list
    recovered_bits: list
    desync_steps: list
    trace: Optional[list] = None


def embed(
    session: StegoSession,
    payload_bits,
    want_trace: bool = False,
    fill_to_max: bool = False,
) -> EmbedResult:
    """Generate a stegotext carrying the framed payload.

    Generation normally stops as soon as the extractor-visible prefix
    commits every framed bit; with fill_to_max it continues (carrying
    filler) until <eos> or max_len.  Hitting <eos> or max_len before the
    payload is fully committed is an error, not a silent truncation.
    """
    stream = BitStream(payload_bits, session.prng_seed)
    needed = stream.framed_length
    decoder = StreamDecoder(stream)
    shadow = TokenEncoder()  # tracks what Bob will be able to recover
    generated = []
    trace = [] if want_trace else None
    eos = session.vocab.eos_id
    ended_by_eos = False
    committed = 0
    for t in range(session.max_len):
        qd = session.step_quantdist(generated)
        wh = session.window_hash(generated) if want_trace else None
        token = ac_embed_step(qd, decoder)
        if token == eos:
            # Bob never sees the <eos> step: its bits are not committed.
            ended_by_eos = True
            if committed < needed:
                raise CapacityExhausted(bits_embedded=committed, bits_needed=needed)
            break
        shadow.encode_symbol(qd, token)
        committed = shadow.bits_committed
        generated.append(token)
        if want_trace:
            trace.append(StepTrace(t, wh, int(qd.support.size), token, committed))
        if committed >= needed and not fill_to_max:
            break
    else:
        if committed < needed:
            raise CapacityExhausted(bits_embedded=committed, bits_needed=needed)
    return EmbedResult(
        stegotext=detokenize(generated, session.vocab),
        tokens=generated,
        bits_committed=committed,
        payload_length=needed - HEADER_BITS,
        ended_by_eos=ended_by_eos,
        trace=trace,
    )


def extract(
    session: StegoSession,
    stegotext: bytes,
    want_trace: bool = False,
    diagnostic: bool = False,
    verify_filler: bool = True,
) -> ExtractResult:
    """Recover the payload from a stegotext.

    In diagnostic mode extraction continues past a desync (a token outside
    the reconstructed support), skipping the narrowing for that step, so
    per-position accounting stays available for robustness studies.
    """
    tokens = tokenize(stegotext, session.vocab)
    encoder = TokenEncoder()
    trace = [] if want_trace else None
    desyncs = []
    generated = []
    for t, token in enumerate(tokens):
        qd = session.step_quantdist(generated)
        wh = session.window_hash(generated) if want_trace else None
        if qd.index_of(token) < 0:
            if not diagnostic:
                raise ExtractionDesync(step=t, token=token)
            desyncs.append(t)
        else:
            encoder.encode_symbol(qd, token)
        generated.append(token)
        if want_trace:
            trace.append(
                StepTrace(t, wh, int(qd.support.size), token, encoder.bits_committed)
            )
    bits = encoder.emitted
    if len(bits) < HEADER_BITS:
        raise FramingError(
            f"only {len(bits)} bits recovered; framing header needs {HEADER_BITS}"
        )
    length = 0
    for b in bits[:HEADER_BITS]:
        length = (length << 1) | b
    if len(bits) < HEADER_BITS + length:
        raise FramingError(
            f"header promises {length} payload bits but only "
            f"{len(bits) - HEADER_BITS} were recovered"
        )
    payload = bits[HEADER_BITS:HEADER_BITS + length]
    if verify_filler and not diagnostic:
        filler = filler_bit_generator(session.prng_seed)
        for b in bits[HEADER_BITS + length:]:
            if b != next(filler):
                raise FramingError("filler bits do not match the session seed")
    return ExtractResult(
        payload_bits=payload, recovered_bits=bits, desync_steps=desyncs, trace=trace
    )


def run_quantdists(session: StegoSession, tokens) -> list:
    """Per-step quantized distributions along a fixed token sequence.

    Step t's distribution is conditioned on tokens[:t] through the
    session's window policy; the attack simulator compares these tables
    byte-for-byte between attacked and unattacked runs.
    """
    out = []
    for t in range(len(tokens)):
        out.append(session.step_quantdist(tokens[:t]))
    return out
