"""Command-line front end.

Subcommands bind the library into the two-endpoint workflow: `gen-model`
builds the reference model deterministically, `embed`/`extract` run the
two sides of a session from a shared JSON config, `attack` and `eval`
reproduce the measurement protocols, `train-bridge` fits a soft bridge.

Exit codes: 0 success, 2 configuration error, 3 capacity exhausted,
4 extraction desynchronization, 5 framing error.  Set ASW_LOG=debug|info
for progress output.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from .codec import StegoSession, bits_to_bytes, bytes_to_bits, embed, extract
from .config import build_session, config_hash, load_config
from .distill import (
    REVERSE_KL,
    DistillConfig,
    DistillSample,
    FORWARD_KL,
    evaluate_loss,
    init_bridge,
    train_bridge,
)
from .errors import (
    CapacityExhausted,
    ConfigError,
    ExtractionDesync,
    FramingError,
    StegoError,
)
from .metrics import avg_kl_run, kl_tvd_run
from .model import TransformerModel
from .pretrain import PRESETS, distill_corpus, eval_prompts, train_model
from .robust import AttackSpec, simulate_attack
from .window import ASW, BASIC, FULL, BridgeContext, WindowPolicy, save_bridge

log = logging.getLogger("anchorstego")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CAPACITY = 3
EXIT_DESYNC = 4
EXIT_FRAMING = 5


def _setup_logging():
    level = os.environ.get("ASW_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                       format="%(levelname)s %(message)s")


def _read_bytes(path) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()


def _write_trace(path, trace):
    with open(path, "w") as fh:
        for row in trace:
            fh.write(json.dumps({
                "t": row.t,
                "window_hash": row.window_hash,
                "support_size": row.support_size,
                "token": row.token,
                "bits_committed": row.bits_committed,
            }) + "\n")


def _session_from_args(args) -> StegoSession:
    cfg = load_config(args.config)
    print(f"config-hash {config_hash(cfg)}")
    prompt = _read_bytes(args.prompt) if args.prompt else b""
    return build_session(cfg, prompt)


def cmd_embed(args) -> int:
    session = _session_from_args(args)
    message = _read_bytes(args.message)
    result = embed(session, bytes_to_bits(message), want_trace=args.trace is not None,
                   fill_to_max=args.fill)
    with open(args.output, "wb") as fh:
        fh.write(result.stegotext)
    if args.trace:
        _write_trace(args.trace, result.trace)
    print(f"tokens {len(result.tokens)}")
    print(f"bits-committed {result.bits_committed}")
    print(f"capacity {result.capacity:.3f} bits/token")
    return EXIT_OK


def cmd_extract(args) -> int:
    session = _session_from_args(args)
    stegotext = _read_bytes(args.stegotext)
    result = extract(session, stegotext, want_trace=args.trace is not None)
    payload = bits_to_bytes(result.payload_bits)
    with open(args.output, "wb") as fh:
        fh.write(payload)
    if args.trace:
        _write_trace(args.trace, result.trace)
    print(f"payload-bits {len(result.payload_bits)}")
    return EXIT_OK


def cmd_attack(args) -> int:
    session = _session_from_args(args)
    stegotext = _read_bytes(args.stegotext)
    spec = AttackSpec(kind=args.kind, m=args.m, seed=args.seed)
    report = simulate_attack(session, stegotext, spec, trials=args.trials)
    payload = report.to_dict()
    with open(args.output, "w") as fh:
        json.dump(payload, fh, indent=2)
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(payload))
            writer.writeheader()
            writer.writerow(payload)
    print(f"unaffected-ratio {report.unaffected_ratio:.4f}")
    if report.closed_form_E is not None:
        print(f"closed-form-E {report.closed_form_E:.4f} "
              f"measured {report.mc_influenced_mean:.4f}")
    return EXIT_OK


def cmd_train_bridge(args) -> int:
    model = TransformerModel.load(args.model)
    dcfg = DistillConfig(loss=args.loss, l_bridge=args.l_bridge, w=args.w,
                         epochs=args.epochs, seed=args.seed)
    if args.corpus:
        with open(args.corpus) as fh:
            raw = json.load(fh)
        samples = [DistillSample(prompt=s["prompt"], response=s["response"]) for s in raw]
    else:
        pairs = distill_corpus(model, args.samples, args.seed)
        samples = [DistillSample(prompt=p, response=r) for p, r in pairs]
    if len(samples) < 4:
        raise ConfigError("corpus too small; need at least 4 samples")
    n_val = max(1, len(samples) // 5)
    result = train_bridge(samples[n_val:], samples[:n_val], dcfg, model)
    save_bridge(result.theta, args.output)
    base = evaluate_loss(samples[:n_val], init_bridge(model, dcfg.l_bridge, dcfg.seed),
                         dcfg, model)
    print(f"best-epoch {result.best_epoch}")
    print(f"val-loss {result.best_val_loss:.5f} (random-init baseline {base:.5f})")
    return EXIT_OK


def _eval_policies(model, w):
    hard = BridgeContext(tokens=tuple(b"~"))
    empty = BridgeContext(tokens=())
    return [
        ("full", WindowPolicy(kind=FULL, w=w)),
        ("basic", WindowPolicy(kind=BASIC, w=w)),
        ("asw-empty", WindowPolicy(kind=ASW, w=w, bridge=empty)),
        ("asw-hard", WindowPolicy(kind=ASW, w=w, bridge=hard)),
    ]


def cmd_eval(args) -> int:
    model = TransformerModel.load(args.model)
    prompts = eval_prompts(args.prompts, args.seed)
    rows = []
    if args.suite == "kl":
        for w in args.w:
            for name, policy in _eval_policies(model, w):
                means = []
                for i, prompt in enumerate(prompts):
                    ptoks = [model.vocab.bos_id] + list(prompt)
                    trace = avg_kl_run(model, ptoks, policy, max_len=args.max_len,
                                       seed=args.seed + i)
                    means.append(trace.mean_nats)
                rows.append({"policy": name, "w": w,
                             "mean_kl_nats": float(np.mean(means))})
                log.info("kl policy=%s w=%d mean=%.4f", name, w, rows[-1]["mean_kl_nats"])
    elif args.suite == "quality":
        for w in args.w:
            for name, policy in _eval_policies(model, w):
                kls, tvmax = [], 0.0
                for i, prompt in enumerate(prompts):
                    ptoks = [model.vocab.bos_id] + list(prompt)
                    trace, tvs = kl_tvd_run(model, ptoks, policy, max_len=args.max_len,
                                            seed=args.seed + i)
                    kls.append(trace.mean_nats)
                    tvmax = max(tvmax, float(tvs.max()) if tvs.size else 0.0)
                rows.append({"policy": name, "w": w,
                             "mean_kl_nats": float(np.mean(kls)),
                             "max_step_tvd": tvmax})
    else:  # robustness
        from .robust import expected_influenced
        for w in args.w:
            for m in (1, 2, 3):
                rows.append({"w": w, "m": m, "T": args.max_len,
                             "closed_form_E": expected_influenced(args.max_len, m, w)})
    with open(args.output, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    print(f"wrote {len(rows)} rows to {args.output}")
    return EXIT_OK


def cmd_gen_model(args) -> int:
    if args.preset not in PRESETS:
        raise ConfigError(f"unknown preset {args.preset!r}")
    cfg = PRESETS[args.preset]
    if args.steps is not None:
        from dataclasses import replace
        cfg = replace(cfg, steps=args.steps)
    if args.seed is not None:
        from dataclasses import replace
        cfg = replace(cfg, seed=args.seed)
    model = train_model(cfg, log_every=100 if log.isEnabledFor(logging.INFO) else 0)
    model.save(args.output)
    print(f"model-hash {model.param_hash()}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="anchorstego")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("embed", help="hide a message inside generated text")
    p.add_argument("config")
    p.add_argument("message")
    p.add_argument("--prompt")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--trace")
    p.add_argument("--fill", action="store_true",
                   help="keep generating until <eos> or max_len")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("extract", help="recover a message from a stegotext")
    p.add_argument("config")
    p.add_argument("stegotext")
    p.add_argument("--prompt")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--trace")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("attack", help="Monte Carlo attack simulation")
    p.add_argument("config")
    p.add_argument("stegotext")
    p.add_argument("--prompt")
    p.add_argument("--kind", default="substitute",
                   choices=["substitute", "delete", "insert"])
    p.add_argument("--m", type=int, default=1)
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--csv")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("train-bridge", help="fit a soft bridge by self-distillation")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus")
    p.add_argument("--loss", default=FORWARD_KL, choices=[FORWARD_KL, REVERSE_KL])
    p.add_argument("--l-bridge", type=int, default=8)
    p.add_argument("--w", type=int, default=8)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--samples", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_train_bridge)

    p = sub.add_parser("eval", help="measurement sweeps over a seeded prompt set")
    p.add_argument("--model", required=True)
    p.add_argument("--suite", default="kl", choices=["kl", "quality", "robustness"])
    p.add_argument("--prompts", type=int, default=20)
    p.add_argument("--max-len", type=int, default=48)
    p.add_argument("--w", type=int, nargs="+", default=[4, 8, 16])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gen-model", help="build and pretrain the reference model")
    p.add_argument("--preset", default="default")
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_gen_model)
    return ap


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CapacityExhausted as exc:
        print(f"capacity exhausted: committed {exc.bits_embedded} of "
              f"{exc.bits_needed} bits", file=sys.stderr)
        return EXIT_CAPACITY
    except ExtractionDesync as exc:
        print(f"extraction desync at step {exc.step}: token {exc.token} "
              f"outside reconstructed support", file=sys.stderr)
        return EXIT_DESYNC
    except FramingError as exc:
        print(f"framing error: {exc}", file=sys.stderr)
        return EXIT_FRAMING
    except StegoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
