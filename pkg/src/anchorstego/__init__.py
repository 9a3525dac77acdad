"""Anchored sliding-window linguistic steganography toolkit.

A steganographic session pins the model's context to a fixed anchor (the
prompt plus an optional bridge segment) followed by only the latest w
generated tokens, so each inference step depends on a bounded, known set
of stegotext positions.  Arithmetic coding over quantized next-token
distributions makes embedding and extraction exact inverses.
"""

from .codec import (
    DEFAULT_Q,
    BitStream,
    EmbedResult,
    ExtractResult,
    QuantDist,
    StegoSession,
    bits_to_bytes,
    bytes_to_bits,
    embed,
    extract,
    quantize,
)
from .config import build_session, config_hash, load_config
from .distill import (
    FORWARD_KL,
    REVERSE_KL,
    DistillConfig,
    DistillSample,
    train_bridge,
)
from .errors import StegoError
from .metrics import KLTrace, avg_kl_run, bleu2, pinsker_bound, rouge_l, stepwise_kl, tvd
from .model import ModelConfig, TransformerModel, init_params
from .robust import (
    AttackSpec,
    RobustnessReport,
    brute_force_E,
    expected_influenced,
    influenced_delta,
    simulate_attack,
)
from .sampling import ProbDist, SamplerConfig, dist_from_logits
from .vocab import Vocabulary, byte_vocab, detokenize, tokenize
from .window import (
    AFTER_OVERFLOW,
    ALWAYS,
    ASW,
    BASIC,
    FULL,
    BridgeContext,
    WindowPolicy,
    build_embedding_window,
    build_token_window,
    load_bridge,
    save_bridge,
    window_dependency_set,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
