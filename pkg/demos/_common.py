"""Shared helper for the demo scripts: build (or reuse) a small pretrained
model checkpoint next to the demos so each script stays self-contained."""

import os

from anchorstego.model import TransformerModel
from anchorstego.pretrain import PRESETS, train_model

CACHE = os.path.join(os.path.dirname(__file__), "tiny.aswl")


def get_model(path: str = CACHE) -> TransformerModel:
    if os.path.exists(path):
        return TransformerModel.load(path)
    print("pretraining a small model (one-time, ~30s)...")
    model = train_model(PRESETS["tiny"])
    model.save(path)
    print(f"saved checkpoint to {path}")
    return model
