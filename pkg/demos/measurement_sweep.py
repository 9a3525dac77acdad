"""Measure how much each window policy distorts the model's distribution.

For each policy the script samples continuations from the full-context
distribution and measures, at every step, the KL divergence between the
full-context and windowed next-token distributions. Lower is better; an
informative bridge (the corpus's elision marker) should beat an empty
one, and both should beat a plain sliding window.
"""

import numpy as np

from _common import get_model

from anchorstego import ASW, BASIC, BridgeContext, WindowPolicy
from anchorstego.metrics import avg_kl_run
from anchorstego.pretrain import eval_prompts
from anchorstego.window import AFTER_OVERFLOW


def main():
    model = get_model()
    prompts = eval_prompts(20, seed=0)
    hard = BridgeContext(tokens=tuple(b"~"))
    empty = BridgeContext(tokens=())
    print(f"{'policy':>10} " + " ".join(f"w={w:<6}" for w in (4, 8, 16)))
    for name, make in [
        ("basic", lambda w: WindowPolicy(kind=BASIC, w=w)),
        ("asw-empty", lambda w: WindowPolicy(kind=ASW, w=w, bridge=empty)),
        ("asw-hard", lambda w: WindowPolicy(kind=ASW, w=w, bridge=hard,
                                            bridge_activation=AFTER_OVERFLOW)),
    ]:
        row = []
        for w in (4, 8, 16):
            means = []
            for i, p in enumerate(prompts):
                ptoks = [model.vocab.bos_id] + list(p)
                means.append(avg_kl_run(model, ptoks, make(w), max_len=48,
                                        seed=i).mean_nats)
            row.append(float(np.mean(means)))
        print(f"{name:>10} " + " ".join(f"{v:<8.4f}" for v in row))
    print("\nmean per-step KL to the full-context distribution, in nats.")


if __name__ == "__main__":
    main()
