import numpy as np
import pytest

from anchorstego.distill import (
    FORWARD_KL,
    REVERSE_KL,
    DistillConfig,
    DistillSample,
    evaluate_loss,
    forward_kl_loss,
    grad_bridge,
    init_bridge,
    reverse_kl_loss,
    sample_loss_and_grad,
    student_logits_for,
    teacher_logits_for,
    teacher_student_logits,
    train_bridge,
)
from anchorstego.errors import ShapeError
from anchorstego.model import ModelConfig, TransformerModel, init_params

CFG = ModelConfig(n_layers=1, d_model=32, n_heads=2, d_ff=64)


@pytest.fixture(scope="module")
def model():
    return TransformerModel(CFG, init_params(CFG, seed=0))


def _logits_for_probs(p):
    return np.log(np.asarray(p, dtype=np.float64))[None, :]


def test_forward_kl_zero_on_equal():
    l = np.random.default_rng(0).normal(size=(4, 6))
    assert forward_kl_loss(l, l) == 0.0


def test_forward_kl_closed_form():
    t = _logits_for_probs([0.5, 0.5])
    s = _logits_for_probs([0.25, 0.75])
    assert abs(forward_kl_loss(t, s) - 0.14384) < 1e-4


def test_reverse_kl_closed_form():
    t = _logits_for_probs([0.25, 0.75])
    s = _logits_for_probs([0.5, 0.5])
    assert abs(reverse_kl_loss(t, s) - 0.14384) < 1e-4


def test_kl_asymmetry_witness():
    t = _logits_for_probs([0.5, 0.5])
    s = _logits_for_probs([0.25, 0.75])
    assert abs(forward_kl_loss(t, s) - 0.14384) < 1e-4
    assert abs(reverse_kl_loss(t, s) - 0.13081) < 1e-4


def test_loss_averages_over_steps():
    t1, s1 = _logits_for_probs([0.5, 0.5]), _logits_for_probs([0.25, 0.75])
    t2, s2 = _logits_for_probs([0.9, 0.1]), _logits_for_probs([0.6, 0.4])
    a = forward_kl_loss(t1, s1)
    b = forward_kl_loss(t2, s2)
    both = forward_kl_loss(np.vstack([t1, t2]), np.vstack([s1, s2]))
    assert abs(both - (a + b) / 2) < 1e-12


def test_length_mismatch_rejected():
    with pytest.raises(ShapeError):
        forward_kl_loss(np.zeros((2, 4)), np.zeros((3, 4)))


def test_teacher_student_shapes(model):
    sample = DistillSample(prompt=[256, 1, 2], response=[3, 4, 5, 6])
    theta = init_bridge(model, 8, 0)
    t, s = teacher_student_logits(sample, theta, w=2, model=model)
    assert t.shape == (4, CFG.vocab_size)
    assert s.shape == (4, CFG.vocab_size)


def test_no_truncation_zero_bridge_matches_teacher(model):
    sample = DistillSample(prompt=[256, 1, 2], response=[3, 4, 5])
    theta = np.zeros((0, CFG.d_model))
    t, s = teacher_student_logits(sample, theta, w=8, model=model)
    assert np.allclose(t, s, atol=1e-12)
    assert forward_kl_loss(t, s) < 1e-12


def test_soft_bridge_from_hard_embeddings_matches_token_path(model):
    from anchorstego.window import ASW, BridgeContext, WindowPolicy, build_token_window

    hard_tokens = (9, 10)
    theta = model.embed_tokens(hard_tokens)
    sample = DistillSample(prompt=[256, 1], response=[2, 3, 4, 5, 6])
    w = 2
    s = student_logits_for(sample, theta, w, model)
    pol = WindowPolicy(kind=ASW, w=w, bridge=BridgeContext(tokens=hard_tokens))
    for t in range(len(sample.response)):
        ctx = build_token_window(sample.prompt, sample.response[:t], pol)
        assert np.allclose(s[t], model.next_logits(ctx), atol=1e-12)


def test_gradient_zero_at_loss_zero(model):
    sample = DistillSample(prompt=[256, 1, 2], response=[3, 4])
    cfg = DistillConfig(loss=FORWARD_KL, l_bridge=0, w=8)
    theta = np.zeros((0, CFG.d_model))
    loss, grad = sample_loss_and_grad(sample, theta, cfg, model)
    assert loss < 1e-12
    assert grad.shape == (0, CFG.d_model)


def _fd_check(model, loss_kind, seed, n_coords=8, h=1e-5, tol=1e-4):
    rng = np.random.default_rng(seed)
    T = int(rng.integers(3, 9))
    sample = DistillSample(
        prompt=[256] + list(rng.integers(0, 256, size=int(rng.integers(1, 4)))),
        response=list(rng.integers(0, 256, size=T)),
    )
    l_bridge = int(rng.integers(1, 5))
    w = int(rng.integers(2, 6))
    cfg = DistillConfig(loss=loss_kind, l_bridge=l_bridge, w=w)
    theta = init_bridge(model, l_bridge, seed)
    _, grad = sample_loss_and_grad(sample, theta, cfg, model)

    def loss_at(th):
        return evaluate_loss([sample], th, cfg, model)

    for _ in range(n_coords):
        i = int(rng.integers(0, l_bridge))
        j = int(rng.integers(0, CFG.d_model))
        up, down = theta.copy(), theta.copy()
        up[i, j] += h
        down[i, j] -= h
        fd = (loss_at(up) - loss_at(down)) / (2 * h)
        assert abs(grad[i, j] - fd) / max(1.0, abs(fd)) < tol, (loss_kind, seed, i, j)


@pytest.mark.parametrize("loss_kind", [FORWARD_KL, REVERSE_KL])
def test_bridge_gradient_matches_finite_differences(model, loss_kind):
    for seed in range(3):
        _fd_check(model, loss_kind, seed)


def test_gradients_differ_between_losses(model):
    sample = DistillSample(prompt=[256, 1], response=[2, 3, 4, 5])
    theta = init_bridge(model, 2, 1)
    gf = grad_bridge(sample, theta, DistillConfig(loss=FORWARD_KL, l_bridge=2, w=2), model)
    gr = grad_bridge(sample, theta, DistillConfig(loss=REVERSE_KL, l_bridge=2, w=2), model)
    assert not np.allclose(gf, gr)


def _toy_corpus(model, n, seed, T=6):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        out.append(DistillSample(
            prompt=[256] + list(rng.integers(0, 256, size=2)),
            response=list(rng.integers(0, 256, size=T)),
        ))
    return out


def test_training_is_deterministic(model):
    cfg = DistillConfig(loss=FORWARD_KL, l_bridge=2, w=3, epochs=2, seed=11)
    train = _toy_corpus(model, 6, 0)
    val = _toy_corpus(model, 2, 1)
    a = train_bridge(train, val, cfg, model)
    b = train_bridge(train, val, cfg, model)
    assert np.array_equal(a.theta, b.theta)
    assert [r.val_loss for r in a.log] == [r.val_loss for r in b.log]


def test_training_leaves_model_frozen(model):
    before = model.param_hash()
    cfg = DistillConfig(loss=FORWARD_KL, l_bridge=2, w=3, epochs=1)
    train_bridge(_toy_corpus(model, 4, 2), _toy_corpus(model, 2, 3), cfg, model)
    assert model.param_hash() == before


def test_training_on_trivial_corpus_stays_at_zero(model):
    # responses short enough that the window never truncates: with a
    # zero-length bridge the student equals the teacher, loss stays ~0
    cfg = DistillConfig(loss=FORWARD_KL, l_bridge=0, w=8, epochs=2)
    corpus = _toy_corpus(model, 4, 4, T=4)
    res = train_bridge(corpus[:3], corpus[3:], cfg, model)
    assert res.best_val_loss < 1e-10


def test_best_checkpoint_selected(model):
    cfg = DistillConfig(loss=FORWARD_KL, l_bridge=2, w=3, epochs=3)
    res = train_bridge(_toy_corpus(model, 6, 5), _toy_corpus(model, 2, 6), cfg, model)
    assert res.best_val_loss == min(r.val_loss for r in res.log)


def test_config_validation():
    with pytest.raises(ShapeError):
        DistillConfig(loss="other")
    with pytest.raises(ShapeError):
        DistillConfig(lr=0.0)
    with pytest.raises(ShapeError):
        DistillSample(prompt=[1], response=[])
