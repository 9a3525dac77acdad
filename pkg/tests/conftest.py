import numpy as np
import pytest

from anchorstego.model import TransformerModel
from anchorstego.pretrain import PRESETS, train_model
from anchorstego.vocab import byte_vocab


@pytest.fixture(scope="session")
def tiny_model(tmp_path_factory):
    """Small pretrained model; cheap enough for high-volume round trips."""
    model = train_model(PRESETS["tiny"])
    path = tmp_path_factory.mktemp("models") / "tiny.aswl"
    model.save(path)
    model.checkpoint_path = str(path)
    return model


@pytest.fixture(scope="session")
def default_model(tmp_path_factory):
    """Reference-size pretrained model used for measurement tests."""
    model = train_model(PRESETS["default"])
    path = tmp_path_factory.mktemp("models") / "default.aswl"
    model.save(path)
    model.checkpoint_path = str(path)
    return model


class UniformModel:
    """Emits uniform logits over the first 2**k tokens; everything else is
    pushed far below any nucleus cutoff."""

    def __init__(self, k: int):
        self.vocab = byte_vocab()
        self.k = k

    def next_logits(self, ctx):
        logits = np.full(self.vocab.size, -50.0)
        logits[: 2 ** self.k] = 0.0
        return logits


@pytest.fixture
def uniform_model_factory():
    return UniformModel
