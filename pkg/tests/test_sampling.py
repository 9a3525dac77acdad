import numpy as np
import pytest

from anchorstego.errors import ShapeError
from anchorstego.sampling import (
    ProbDist,
    SamplerConfig,
    dist_from_logits,
    sample_multinomial,
    softmax,
)


def test_symmetric_logits():
    d = dist_from_logits(np.zeros(2), SamplerConfig())
    assert np.allclose(d.probs, [0.5, 0.5])


def test_softmax_closed_form():
    d = dist_from_logits(np.log([1.0, 3.0]), SamplerConfig())
    assert np.allclose(d.probs, [0.25, 0.75])


def test_top_p_cutoff_by_hand():
    d = dist_from_logits(np.array([0.0, 10.0]), SamplerConfig(top_p=0.5))
    assert list(d.support) == [1]
    assert d.probs[1] == 1.0 and d.probs[0] == 0.0


def test_top_p_preserves_ratios():
    logits = np.log([0.5, 0.3, 0.15, 0.05])
    d = dist_from_logits(logits, SamplerConfig(top_p=0.8))
    assert list(d.support) == [0, 1]
    assert np.isclose(d.probs[0] / d.probs[1], 0.5 / 0.3)


def test_probs_sum_to_one_enforced():
    with pytest.raises(ShapeError):
        ProbDist(probs=np.array([0.5, 0.4]), support=np.array([0, 1]))


def test_temperature_flattens():
    logits = np.array([0.0, 2.0])
    hot = dist_from_logits(logits, SamplerConfig(temperature=10.0))
    cold = dist_from_logits(logits, SamplerConfig(temperature=0.1))
    assert hot.probs[0] > cold.probs[0]


def test_invalid_sampler_config():
    with pytest.raises(ValueError):
        SamplerConfig(temperature=0.0)
    with pytest.raises(ValueError):
        SamplerConfig(top_p=0.0)
    with pytest.raises(ValueError):
        SamplerConfig(top_p=1.5)


def test_single_support_always_sampled():
    d = dist_from_logits(np.array([0.0, 100.0]), SamplerConfig(top_p=0.5))
    rng = np.random.default_rng(0)
    assert all(sample_multinomial(d, rng) == 1 for _ in range(20))


def test_multinomial_frequencies():
    d = dist_from_logits(np.zeros(2), SamplerConfig())
    rng = np.random.default_rng(7)
    draws = np.array([sample_multinomial(d, rng) for _ in range(100_000)])
    assert abs(draws.mean() - 0.5) < 0.01


def test_multinomial_reproducible():
    d = dist_from_logits(np.arange(5.0), SamplerConfig())
    a = [sample_multinomial(d, np.random.default_rng(3)) for _ in range(10)]
    b = [sample_multinomial(d, np.random.default_rng(3)) for _ in range(10)]
    assert a == b


def test_softmax_normalizes():
    p = softmax(np.array([1.0, 2.0, 3.0]))
    assert np.isclose(p.sum(), 1.0)
