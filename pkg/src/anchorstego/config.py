"""JSON session configuration shared by the two endpoints.

Both parties must run from configurations that agree on every field; the
canonical-JSON hash lets them compare out of band without shipping the
file itself.
"""

from __future__ import annotations

import hashlib
import json

from .codec import DEFAULT_Q, StegoSession
from .errors import ConfigError
from .model import TransformerModel
from .sampling import SamplerConfig
from .window import (
    AFTER_OVERFLOW,
    ALWAYS,
    ASW,
    BASIC,
    FULL,
    BridgeContext,
    WindowPolicy,
    load_bridge,
)

_TOP_KEYS = {"model_path", "policy", "sampler", "coder_q", "prng_seed", "max_len",
             "forbid_eos"}
_POLICY_KEYS = {"kind", "w", "bridge", "activation"}
_SAMPLER_KEYS = {"temperature", "top_p"}


def config_hash(cfg: dict) -> str:
    """sha256 over the canonical (sorted-key, compact) JSON form."""
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}")
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict):
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(cfg) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    for key in ("model_path", "policy"):
        if key not in cfg:
            raise ConfigError(f"missing required key {key!r}")
    pol = cfg["policy"]
    if not isinstance(pol, dict) or set(pol) - _POLICY_KEYS:
        raise ConfigError("policy must be an object with kind/w/bridge/activation")
    kind = pol.get("kind")
    if kind not in (FULL, BASIC, ASW):
        raise ConfigError(f"policy.kind must be one of full/basic/asw, got {kind!r}")
    w = pol.get("w", 10)
    if not isinstance(w, int) or w < 1:
        raise ConfigError("policy.w must be a positive integer")
    bridge = pol.get("bridge")
    if kind == ASW:
        if not isinstance(bridge, dict) or len(bridge) != 1 or \
                next(iter(bridge)) not in ("hard", "soft_path"):
            raise ConfigError('asw policy requires bridge {"hard": text} or '
                              '{"soft_path": file}')
        if not isinstance(next(iter(bridge.values())), str):
            raise ConfigError("bridge value must be a string")
    elif bridge is not None:
        raise ConfigError(f"{kind} policy takes no bridge")
    act = pol.get("activation", ALWAYS)
    if act not in (ALWAYS, AFTER_OVERFLOW):
        raise ConfigError(f"unknown activation {act!r}")
    sampler = cfg.get("sampler", {})
    if not isinstance(sampler, dict) or set(sampler) - _SAMPLER_KEYS:
        raise ConfigError("sampler must be an object with temperature/top_p")
    t = sampler.get("temperature", 1.0)
    p = sampler.get("top_p", 1.0)
    if not isinstance(t, (int, float)) or t <= 0:
        raise ConfigError("sampler.temperature must be positive")
    if not isinstance(p, (int, float)) or not 0 < p <= 1:
        raise ConfigError("sampler.top_p must lie in (0, 1]")
    q = cfg.get("coder_q", DEFAULT_Q)
    if not isinstance(q, int) or not 8 <= q <= 62:
        raise ConfigError("coder_q must be an integer in [8, 62]")
    seed = cfg.get("prng_seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("prng_seed must be a non-negative integer")
    max_len = cfg.get("max_len", 512)
    if not isinstance(max_len, int) or max_len < 1:
        raise ConfigError("max_len must be a positive integer")
    if not isinstance(cfg.get("forbid_eos", False), bool):
        raise ConfigError("forbid_eos must be a boolean")


def build_policy(pol: dict) -> WindowPolicy:
    kind = pol["kind"]
    w = pol.get("w", 10)
    act = pol.get("activation", ALWAYS)
    bridge = None
    if kind == ASW:
        spec = pol["bridge"]
        if "hard" in spec:
            bridge = BridgeContext(tokens=tuple(spec["hard"].encode("utf-8")))
        else:
            bridge = BridgeContext(theta=load_bridge(spec["soft_path"]))
    return WindowPolicy(kind=kind, w=w, bridge=bridge, bridge_activation=act)


def build_session(cfg: dict, prompt: bytes, model=None) -> StegoSession:
    validate_config(cfg)
    if model is None:
        model = TransformerModel.load(cfg["model_path"])
    sampler = cfg.get("sampler", {})
    return StegoSession(
        model=model,
        prompt=prompt,
        policy=build_policy(cfg["policy"]),
        sampler=SamplerConfig(
            temperature=float(sampler.get("temperature", 1.0)),
            top_p=float(sampler.get("top_p", 1.0)),
        ),
        coder_q=cfg.get("coder_q", DEFAULT_Q),
        prng_seed=cfg.get("prng_seed", 0),
        max_len=cfg.get("max_len", 512),
        forbid_eos=cfg.get("forbid_eos", False),
    )
