import numpy as np
import pytest

from anchorstego.errors import ContextOverflow, EmptyContext, ShapeError, UnknownToken
from anchorstego.model import (
    ModelConfig,
    TransformerModel,
    init_params,
    sinusoidal_positions,
)
from anchorstego.vocab import byte_vocab

CFG = ModelConfig(n_layers=2, d_model=32, n_heads=4, d_ff=64, vocab_size=259)


@pytest.fixture(scope="module")
def model():
    return TransformerModel(CFG, init_params(CFG, seed=0))


def test_default_config_dimensions():
    cfg = ModelConfig()
    assert (cfg.n_layers, cfg.d_model, cfg.n_heads, cfg.d_ff) == (2, 64, 4, 256)
    assert cfg.vocab_size == 259 and cfg.max_context == 512


def test_embed_tokens_table_lookup(model):
    E = model.embed_tokens([7, 7])
    assert E.shape == (2, CFG.d_model)
    assert np.array_equal(E[0], E[1])
    assert np.array_equal(E[0], model.params["wte"][7])
    assert model.embed_tokens([]).shape == (0, CFG.d_model)


def test_embed_tokens_rejects_bad_id(model):
    with pytest.raises(UnknownToken):
        model.embed_tokens([300])


def test_determinism(model):
    ctx = [256, 5, 10, 15]
    a = model.next_logits(ctx)
    b = model.next_logits(ctx)
    assert np.array_equal(a, b)


def test_token_embedding_path_equivalence(model):
    rng = np.random.default_rng(1)
    for _ in range(5):
        ctx = list(rng.integers(0, 259, size=rng.integers(1, 20)))
        token_path = model.next_logits(ctx)
        emb_path = model.next_logits_emb(model.embed_tokens(ctx))
        assert np.array_equal(token_path, emb_path)


def test_empty_context_rejected(model):
    with pytest.raises(EmptyContext):
        model.next_logits([])
    with pytest.raises(EmptyContext):
        model.next_logits_emb(np.zeros((0, CFG.d_model)))


def test_context_overflow(model):
    with pytest.raises(ContextOverflow):
        model.forward(np.zeros((CFG.max_context + 1, CFG.d_model)))


def test_positions_are_window_relative(model):
    # the same token content must produce the same logits no matter how
    # deep into generation the window slid
    window = [3, 1, 4, 1, 5]
    assert np.array_equal(model.next_logits(window), model.next_logits(list(window)))
    E = model.embed_tokens(window)
    assert np.array_equal(model.next_logits_emb(E), model.next_logits_emb(E.copy()))


def test_batched_forward_matches_single(model):
    rng = np.random.default_rng(2)
    E1 = rng.normal(size=(6, CFG.d_model))
    E2 = rng.normal(size=(6, CFG.d_model))
    batched = model.forward(np.stack([E1, E2]))
    assert np.array_equal(batched[0], model.forward(E1))
    assert np.array_equal(batched[1], model.forward(E2))


def test_input_gradient_matches_finite_differences(model):
    rng = np.random.default_rng(3)
    n = 5
    E = rng.normal(size=(n, CFG.d_model))
    target = rng.normal(size=(n, CFG.vocab_size))

    def loss_of(Em):
        return float((model.forward(Em) * target).sum())

    logits, cache = model.forward(E, want_cache=True)
    dE = model.backward(target, cache)
    h = 1e-6
    for _ in range(15):
        i = int(rng.integers(0, n))
        j = int(rng.integers(0, CFG.d_model))
        Ep, Em = E.copy(), E.copy()
        Ep[i, j] += h
        Em[i, j] -= h
        fd = (loss_of(Ep) - loss_of(Em)) / (2 * h)
        assert abs(dE[i, j] - fd) / max(1.0, abs(fd)) < 1e-4


def test_param_gradients_match_finite_differences(model):
    rng = np.random.default_rng(4)
    E = rng.normal(size=(4, CFG.d_model))
    target = rng.normal(size=(4, CFG.vocab_size))
    logits, cache = model.forward(E, want_cache=True)
    _, grads = model.backward(target, cache, want_param_grads=True)
    h = 1e-6
    for name in ("w_un", "layer0.wq", "layer1.w2", "layer0.ln1_g", "layer1.bv"):
        arr = model.params[name]
        flat = arr.reshape(-1)
        for _ in range(4):
            idx = int(rng.integers(0, flat.size))
            orig = flat[idx]
            flat[idx] = orig + h
            up = float((model.forward(E) * target).sum())
            flat[idx] = orig - h
            down = float((model.forward(E) * target).sum())
            flat[idx] = orig
            fd = (up - down) / (2 * h)
            assert abs(grads[name].reshape(-1)[idx] - fd) / max(1.0, abs(fd)) < 1e-4


def test_save_load_round_trip(model, tmp_path):
    path = tmp_path / "m.aswl"
    model.save(path)
    loaded = TransformerModel.load(path)
    assert loaded.cfg == CFG
    assert loaded.param_hash() == model.param_hash()
    ctx = [256, 1, 2, 3]
    assert np.array_equal(loaded.next_logits(ctx), model.next_logits(ctx))


def test_checkpoint_magic_checked(tmp_path):
    path = tmp_path / "bad.aswl"
    path.write_bytes(b"XXXX" + b"\x00" * 64)
    with pytest.raises(ShapeError):
        TransformerModel.load(path)


def test_init_is_seeded():
    a = init_params(CFG, seed=5)
    b = init_params(CFG, seed=5)
    c = init_params(CFG, seed=6)
    assert np.array_equal(a["wte"], b["wte"])
    assert not np.array_equal(a["wte"], c["wte"])


def test_sinusoidal_positions_shape_and_range():
    P = sinusoidal_positions(16, 32)
    assert P.shape == (16, 32)
    assert np.all(np.abs(P) <= 1.0)


def test_heads_must_divide_dim():
    with pytest.raises(ValueError):
        ModelConfig(d_model=30, n_heads=4)
