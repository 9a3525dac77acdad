"""Fit a soft bridge by self-distillation.

A soft bridge is a small trainable embedding matrix inserted between the
prompt and the sliding window. Training minimizes the KL divergence
between the frozen model's full-context predictions (teacher) and its
own windowed predictions with the bridge (student); only the bridge
receives gradients.
"""

from _common import get_model

from anchorstego.distill import (
    FORWARD_KL,
    DistillConfig,
    DistillSample,
    evaluate_loss,
    init_bridge,
    train_bridge,
)
from anchorstego.pretrain import distill_corpus


def main():
    model = get_model()
    pairs = distill_corpus(model, 60, seed=0, response_len=32)
    samples = [DistillSample(prompt=p, response=r) for p, r in pairs]
    val, train = samples[:15], samples[15:]

    cfg = DistillConfig(loss=FORWARD_KL, l_bridge=8, w=8, epochs=8, lr=1e-2, seed=0)
    baseline = evaluate_loss(val, init_bridge(model, cfg.l_bridge, cfg.seed), cfg, model)
    print(f"random-init bridge val loss: {baseline:.5f}")

    result = train_bridge(train, val, cfg, model)
    for row in result.log:
        print(f"  epoch {row.epoch:2d}  train {row.train_loss:.5f}  "
              f"val {row.val_loss:.5f}")
    gain = 1 - result.best_val_loss / baseline
    print(f"best val loss {result.best_val_loss:.5f} "
          f"({gain:.0%} below random init, epoch {result.best_epoch})")


if __name__ == "__main__":
    main()
