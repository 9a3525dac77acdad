import numpy as np
import pytest

from anchorstego.codec import (
    DEFAULT_Q,
    HEADER_BITS,
    BitStream,
    StegoSession,
    StreamDecoder,
    TokenEncoder,
    bits_to_bytes,
    bytes_to_bits,
    embed,
    extract,
    filler_bit_generator,
    quantize,
    run_quantdists,
)
from anchorstego.errors import (
    CapacityExhausted,
    DomainError,
    ExtractionDesync,
    FramingError,
    PrecisionExhausted,
)
from anchorstego.sampling import ProbDist, SamplerConfig
from anchorstego.window import ASW, FULL, BridgeContext, WindowPolicy


def _dist(weights):
    w = np.asarray(weights, dtype=np.float64)
    return ProbDist(probs=w / w.sum(), support=np.arange(w.size))


# ---------------------------------------------------------------------------
# quantization


def test_quantize_symmetric():
    qd = quantize(_dist([1, 1]), 4)
    assert list(qd.freq) == [8, 8]


def test_quantize_largest_remainder_by_hand():
    qd = quantize(_dist([0.7, 0.3]), 4)
    assert list(qd.freq) == [11, 5]


def test_quantize_single_token():
    qd = quantize(_dist([1.0]), 4)
    assert list(qd.freq) == [16]


def test_quantize_minimum_frequency():
    d = _dist([1.0 - 1e-12, 1e-12])
    qd = quantize(d, 8)
    assert qd.freq.min() >= 1
    assert int(qd.freq.sum()) == 256


def test_quantize_sum_exact_property():
    rng = np.random.default_rng(0)
    for _ in range(200):
        k = int(rng.integers(1, 40))
        d = _dist(rng.random(k) + 1e-9)
        qd = quantize(d, DEFAULT_Q)
        assert int(qd.freq.sum()) == 1 << DEFAULT_Q
        assert qd.freq.min() >= 1


def test_quantize_support_overflow():
    with pytest.raises(PrecisionExhausted):
        quantize(_dist(np.ones(32)), 4)


# ---------------------------------------------------------------------------
# range coder


class _FixedBits:
    def __init__(self, bits):
        self.bits = list(bits)
        self.cursor = 0

    def read(self):
        b = self.bits[self.cursor] if self.cursor < len(self.bits) else 0
        self.cursor += 1
        return b


def test_uniform4_code_point_lands_in_third_interval():
    qd = quantize(_dist([1, 1, 1, 1]), 4)
    dec = StreamDecoder(_FixedBits([1, 0] + [0] * 200))
    assert dec.decode_symbol(qd) == 2


def test_single_token_support_consumes_no_bits():
    qd = quantize(_dist([1.0]), 4)
    stream = _FixedBits([1] * 200)
    dec = StreamDecoder(stream)
    before = stream.cursor
    assert dec.decode_symbol(qd) == 0
    assert stream.cursor == before
    enc = TokenEncoder()
    enc.encode_symbol(qd, 0)
    assert enc.emitted == []


def test_encoder_rejects_unsupported_token():
    qd = quantize(_dist([1, 1]), 4)
    enc = TokenEncoder()
    with pytest.raises(ExtractionDesync):
        enc.encode_symbol(qd, 5)


def test_coder_round_trip_property():
    """The extractor-side encoder must re-emit exactly the bit prefix the
    embedder-side decoder consumed, over ~10^4 random steps."""
    rng = np.random.default_rng(42)
    for trial in range(200):
        payload = list(rng.integers(0, 2, size=int(rng.integers(0, 120))))
        stream = BitStream(payload, filler_seed=trial)
        dec = StreamDecoder(stream)
        qds, tokens = [], []
        for _ in range(50):
            k = int(rng.integers(1, 30))
            qd = quantize(_dist(rng.random(k) + 1e-6), 16)
            qds.append(qd)
            tokens.append(dec.decode_symbol(qd))
        enc = TokenEncoder()
        for qd, tok in zip(qds, tokens):
            enc.encode_symbol(qd, tok)
        replay = BitStream(payload, filler_seed=trial)
        consumed = [replay.read() for _ in range(stream.cursor)]
        assert len(enc.emitted) <= stream.cursor
        assert enc.emitted == consumed[: len(enc.emitted)]
        # with 50 moderately-sized steps the framed prefix is covered
        assert len(enc.emitted) >= min(stream.framed_length, len(enc.emitted))


def test_coder_interval_stays_ordered():
    rng = np.random.default_rng(1)
    stream = BitStream([1, 0, 1], filler_seed=9)
    dec = StreamDecoder(stream)
    for _ in range(500):
        qd = quantize(_dist(rng.random(8) + 1e-6), 12)
        dec.decode_symbol(qd)
        assert dec.low < dec.high


# ---------------------------------------------------------------------------
# framing


def test_bit_byte_round_trip():
    data = bytes(range(256))
    assert bits_to_bytes(bytes_to_bits(data)) == data


def test_bitstream_header_is_big_endian_length():
    stream = BitStream([1, 0, 1], filler_seed=0)
    header = [stream.read() for _ in range(HEADER_BITS)]
    assert header == [0] * 30 + [1, 1]  # length 3
    assert [stream.read() for _ in range(3)] == [1, 0, 1]


def test_bitstream_filler_is_seeded():
    a = BitStream([], filler_seed=5)
    b = BitStream([], filler_seed=5)
    c = BitStream([], filler_seed=6)
    bits_a = [a.read() for _ in range(128)]
    bits_b = [b.read() for _ in range(128)]
    bits_c = [c.read() for _ in range(128)]
    assert bits_a == bits_b
    assert bits_a != bits_c


def test_bad_payload_bits_rejected():
    with pytest.raises(FramingError):
        BitStream([0, 2], filler_seed=0)


def test_filler_generator_deterministic():
    g1 = filler_bit_generator(3)
    g2 = filler_bit_generator(3)
    assert [next(g1) for _ in range(64)] == [next(g2) for _ in range(64)]


# ---------------------------------------------------------------------------
# sessions


def _session(model, policy=None, **kw):
    policy = policy or WindowPolicy(kind=ASW, w=8, bridge=BridgeContext(tokens=tuple(b"~")))
    defaults = dict(sampler=SamplerConfig(top_p=0.9), max_len=512, forbid_eos=True)
    defaults.update(kw)
    return StegoSession(model=model, prompt=b"1:abcd", policy=policy, **defaults)


def test_round_trip_tiny(tiny_model):
    sess = _session(tiny_model)
    payload = bytes_to_bits(b"attack at dawn")
    res = embed(sess, payload)
    out = extract(sess, res.stegotext)
    assert out.payload_bits == payload
    assert bits_to_bytes(out.payload_bits) == b"attack at dawn"


def test_empty_payload_round_trip(tiny_model):
    sess = _session(tiny_model)
    res = embed(sess, [])
    out = extract(sess, res.stegotext)
    assert out.payload_bits == []


def test_embed_deterministic(tiny_model):
    a = embed(_session(tiny_model), [1, 0, 1, 1])
    b = embed(_session(tiny_model), [1, 0, 1, 1])
    assert a.stegotext == b.stegotext
    assert a.tokens == b.tokens


def test_capacity_exhausted_reports_progress(tiny_model):
    sess = _session(tiny_model, max_len=4)
    with pytest.raises(CapacityExhausted) as exc:
        embed(sess, [1] * 200)
    assert exc.value.bits_embedded < exc.value.bits_needed == HEADER_BITS + 200


def test_capacity_property(tiny_model):
    res = embed(_session(tiny_model), [0, 1] * 16)
    assert res.capacity == res.bits_committed / len(res.tokens)
    assert res.capacity > 0


def test_wrong_seed_fails_filler_verification(tiny_model):
    sess = _session(tiny_model, prng_seed=1, max_len=128)
    res = embed(sess, bytes_to_bits(b"secret"), fill_to_max=True)
    # trailing committed bits beyond the frame are filler; verifying them
    # against the wrong seed must fail
    assert res.bits_committed > HEADER_BITS + 48
    other = _session(tiny_model, prng_seed=2, max_len=128)
    with pytest.raises(FramingError):
        extract(other, res.stegotext)


def test_extract_rejects_truncated_stegotext(tiny_model):
    sess = _session(tiny_model)
    res = embed(sess, bytes_to_bits(b"0123456789"))
    with pytest.raises(FramingError):
        extract(sess, res.stegotext[:2])


def test_trace_mode_records_steps(tiny_model):
    sess = _session(tiny_model)
    res = embed(sess, [1, 1, 0, 0], want_trace=True)
    assert len(res.trace) == len(res.tokens)
    out = extract(sess, res.stegotext, want_trace=True)
    assert len(out.trace) == len(res.tokens)
    for a, b in zip(res.trace, out.trace):
        assert a.window_hash == b.window_hash
        assert a.token == b.token
        assert a.support_size == b.support_size


def test_decoded_bits_local_under_out_of_window_substitution(tiny_model):
    sess = _session(tiny_model)
    res = embed(sess, bytes_to_bits(b"stable prefix"), want_trace=True)
    tokens = list(res.tokens)
    j = len(tokens) - 1  # outside every window that decodes the payload
    attacked = list(tokens)
    attacked[j] = (attacked[j] + 1) % 256
    base = extract(sess, res.stegotext, want_trace=True)
    hit = extract(sess, bytes(attacked), diagnostic=True, want_trace=True)
    committed_before = base.trace[j - 1].bits_committed
    assert hit.recovered_bits[:committed_before] == base.recovered_bits[:committed_before]


def test_run_quantdists_matches_step_quantdist(tiny_model):
    sess = _session(tiny_model)
    res = embed(sess, [1, 0, 0, 1])
    qds = run_quantdists(sess, res.tokens)
    assert len(qds) == len(res.tokens)
    assert qds[0].key() == sess.step_quantdist([]).key()


def test_forbid_eos_removes_eos_from_support(tiny_model):
    sess = _session(tiny_model, policy=WindowPolicy(kind=FULL, w=4))
    qd = sess.step_quantdist([])
    assert tiny_model.vocab.eos_id not in qd.support


def test_fill_to_max_runs_to_limit(tiny_model):
    sess = _session(tiny_model, max_len=40)
    res = embed(sess, [1, 0], fill_to_max=True)
    assert len(res.tokens) == 40


def test_capacity_undefined_for_empty_run(tiny_model):
    from anchorstego.codec import EmbedResult

    r = EmbedResult(stegotext=b"", tokens=[], bits_committed=0,
                    payload_length=0, ended_by_eos=False)
    with pytest.raises(DomainError):
        r.capacity
