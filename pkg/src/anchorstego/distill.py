"""Self-distillation of the soft bridge.

The frozen model plays both roles: the teacher sees the full context, the
student sees the anchored window with the trainable bridge matrix spliced
in at the embedding level.  Only the bridge receives gradient; a parameter
hash taken before and after training must match.

Per-sample losses average single-step KL divergences over the response.
Forward KL (teacher || student) is mass-covering; reverse KL (student ||
teacher) is mode-seeking; both are supported and their gradients differ
at any generic point.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import NumericalError, ShapeError, TrainingDiverged

FORWARD_KL = "forward"
REVERSE_KL = "reverse"


@dataclass(frozen=True)
class DistillConfig:
    loss: str = FORWARD_KL
    lr: float = 1e-3
    epochs: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.01
    w: int = 8
    l_bridge: int = 8
    batch_size: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.loss not in (FORWARD_KL, REVERSE_KL):
            raise ShapeError(f"unknown loss kind {self.loss!r}")
        if self.lr <= 0 or self.epochs < 1:
            raise ShapeError("lr must be positive and epochs >= 1")


@dataclass
class DistillSample:
    prompt: list
    response: list

    def __post_init__(self):
        if len(self.response) < 1:
            raise ShapeError("response must contain at least one token")


def _log_softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def forward_kl_loss(teacher_logits, student_logits) -> float:
    """(1/T) sum_t KL(softmax(teacher_t) || softmax(student_t)), in nats."""
    t = np.asarray(teacher_logits, dtype=np.float64)
    s = np.asarray(student_logits, dtype=np.float64)
    if t.shape != s.shape:
        raise ShapeError(f"teacher {t.shape} vs student {s.shape}")
    log_p = _log_softmax(t)
    log_q = _log_softmax(s)
    p = np.exp(log_p)
    return float((p * (log_p - log_q)).sum(axis=-1).mean())


def reverse_kl_loss(teacher_logits, student_logits) -> float:
    """(1/T) sum_t KL(softmax(student_t) || softmax(teacher_t)), in nats."""
    return forward_kl_loss(student_logits, teacher_logits)


def _step_loss_and_dstudent(teacher_row, student_row, kind):
    """Single-step loss plus its gradient w.r.t. the student logits.

    The teacher is a constant in both directions: no gradient flows
    through it."""
    log_p = _log_softmax(teacher_row)
    log_q = _log_softmax(student_row)
    p = np.exp(log_p)
    q = np.exp(log_q)
    if kind == FORWARD_KL:
        loss = float((p * (log_p - log_q)).sum())
        dl = q - p
    else:
        diff = log_q - log_p
        loss = float((q * diff).sum())
        dl = q * (diff - loss)
    return loss, dl


def _student_plan(sample: DistillSample, w: int):
    """Groups of student steps sharing one forward pass.

    For t <= w the windows are nested prefixes of
    prompt|bridge|response[:w], so one causal forward covers them all.
    Later steps slide and get a same-length batch."""
    T = len(sample.response)
    prefix_steps = list(range(0, min(w, T - 1) + 1))
    slide_steps = list(range(min(w, T - 1) + 1, T))
    return prefix_steps, slide_steps


def teacher_logits_for(sample: DistillSample, model) -> np.ndarray:
    """Full-context next-token logits at every response step (one forward)."""
    full = list(sample.prompt) + list(sample.response)
    np_len = len(sample.prompt)
    T = len(sample.response)
    logits = model.forward(model.embed_tokens(full[:-1]))
    return logits[np_len - 1: np_len - 1 + T]


def student_logits_for(sample: DistillSample, theta: np.ndarray, w: int, model) -> np.ndarray:
    """Anchored-window next-token logits at every response step."""
    out, _ = _student_forward(sample, theta, w, model, want_caches=False)
    return out


def _student_forward(sample, theta, w, model, want_caches):
    np_len = len(sample.prompt)
    l_bridge = theta.shape[0]
    P = np_len + l_bridge
    T = len(sample.response)
    prefix_steps, slide_steps = _student_plan(sample, w)
    prompt_E = model.embed_tokens(sample.prompt)
    logits_seq = np.empty((T, model.cfg.vocab_size))
    caches = []

    k = prefix_steps[-1]
    E = np.concatenate([prompt_E, theta, model.embed_tokens(sample.response[:k])], axis=0)
    res = model.forward(E, want_cache=want_caches)
    logits, cache = res if want_caches else (res, None)
    for t in prefix_steps:
        logits_seq[t] = logits[P + t - 1]
    caches.append(("prefix", prefix_steps, cache))

    if slide_steps:
        Es = np.stack([
            np.concatenate(
                [prompt_E, theta, model.embed_tokens(sample.response[t - w: t])], axis=0
            )
            for t in slide_steps
        ])
        res = model.forward(Es, want_cache=want_caches)
        logits, cache = res if want_caches else (res, None)
        logits_seq[slide_steps] = logits[:, -1, :]
        caches.append(("slide", slide_steps, cache))
    return logits_seq, caches


def teacher_student_logits(sample: DistillSample, theta: np.ndarray, w: int, model):
    """(teacher, student) length-T logit sequences for one sample."""
    return teacher_logits_for(sample, model), student_logits_for(sample, theta, w, model)


def sample_loss_and_grad(
    sample: DistillSample,
    theta: np.ndarray,
    cfg: DistillConfig,
    model,
    teacher_logits: Optional[np.ndarray] = None,
):
    """Per-sample loss and its exact gradient w.r.t. the bridge matrix."""
    if teacher_logits is None:
        teacher_logits = teacher_logits_for(sample, model)
    np_len = len(sample.prompt)
    l_bridge = cfg.l_bridge
    T = len(sample.response)
    student_logits, caches = _student_forward(sample, theta, cfg.w, model, want_caches=True)

    dstudent = np.zeros_like(student_logits)
    total = 0.0
    for t in range(T):
        loss_t, dl = _step_loss_and_dstudent(teacher_logits[t], student_logits[t], cfg.loss)
        total += loss_t
        dstudent[t] = dl / T
    loss = total / T

    grad = np.zeros_like(theta)
    P = np_len + l_bridge
    for kind, steps, cache in caches:
        if kind == "prefix":
            dlog = np.zeros((cache["n"], model.cfg.vocab_size))
            for t in steps:
                dlog[P + t - 1] = dstudent[t]
            dE = model.backward(dlog, cache)
            grad += dE[np_len: np_len + l_bridge]
        else:
            dlog = np.zeros((len(steps), cache["n"], model.cfg.vocab_size))
            for j, t in enumerate(steps):
                dlog[j, -1] = dstudent[t]
            dE = model.backward(dlog, cache)
            grad += dE[:, np_len: np_len + l_bridge].sum(axis=0)
    if not np.all(np.isfinite(grad)):
        raise NumericalError("non-finite bridge gradient")
    return loss, grad


def grad_bridge(sample, theta, cfg: DistillConfig, model) -> np.ndarray:
    _, grad = sample_loss_and_grad(sample, theta, cfg, model)
    return grad


def evaluate_loss(samples, theta, cfg: DistillConfig, model, teacher_cache=None) -> float:
    losses = []
    for i, sample in enumerate(samples):
        teacher = None if teacher_cache is None else teacher_cache[i]
        if teacher is None:
            teacher = teacher_logits_for(sample, model)
        student = student_logits_for(sample, theta, cfg.w, model)
        if cfg.loss == FORWARD_KL:
            losses.append(forward_kl_loss(teacher, student))
        else:
            losses.append(reverse_kl_loss(teacher, student))
    return float(np.mean(losses))


def init_bridge(model, l_bridge: int, seed: int) -> np.ndarray:
    """Rows drawn from the embedding table's empirical mean and per-axis
    variance, so the untrained student starts in-distribution."""
    rng = np.random.default_rng(seed)
    wte = model.params["wte"]
    mean = wte.mean(axis=0)
    std = wte.std(axis=0)
    return mean + rng.normal(size=(l_bridge, model.cfg.d_model)) * std


@dataclass
class TrainLogRow:
    epoch: int
    train_loss: float
    val_loss: float


@dataclass
class TrainResult:
    theta: np.ndarray
    log: list
    best_epoch: int
    best_val_loss: float


def train_bridge(
    train_samples,
    val_samples,
    cfg: DistillConfig,
    model,
    theta0: Optional[np.ndarray] = None,
) -> TrainResult:
    """AdamW on the bridge matrix only; keeps the epoch checkpoint with the
    lowest validation loss.  Deterministic under a fixed config seed."""
    if not train_samples or not val_samples:
        raise ShapeError("need non-empty train and validation splits")
    theta = (
        init_bridge(model, cfg.l_bridge, cfg.seed) if theta0 is None else theta0.copy()
    )
    if theta.shape != (cfg.l_bridge, model.cfg.d_model):
        raise ShapeError("bridge shape does not match config/model")

    # teacher is frozen: cache its logits once per sample
    teacher_train = [teacher_logits_for(s, model) for s in train_samples]
    teacher_val = [teacher_logits_for(s, model) for s in val_samples]

    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    step = 0
    rng = np.random.default_rng(cfg.seed)
    order = np.arange(len(train_samples))
    log = []
    best = (np.inf, -1, theta.copy())
    for epoch in range(1, cfg.epochs + 1):
        rng.shuffle(order)
        epoch_losses = []
        for start in range(0, order.size, cfg.batch_size):
            batch = order[start: start + cfg.batch_size]
            grad = np.zeros_like(theta)
            for i in batch:
                loss_i, g = sample_loss_and_grad(
                    train_samples[i], theta, cfg, model, teacher_logits=teacher_train[i]
                )
                epoch_losses.append(loss_i)
                grad += g
            grad /= batch.size
            step += 1
            m = cfg.beta1 * m + (1 - cfg.beta1) * grad
            v = cfg.beta2 * v + (1 - cfg.beta2) * grad * grad
            mhat = m / (1 - cfg.beta1 ** step)
            vhat = v / (1 - cfg.beta2 ** step)
            theta = theta - cfg.lr * (
                mhat / (np.sqrt(vhat) + 1e-8) + cfg.weight_decay * theta
            )
        train_loss = float(np.mean(epoch_losses))
        if not np.isfinite(train_loss):
            raise TrainingDiverged(f"train loss {train_loss} at epoch {epoch}")
        val_loss = evaluate_loss(val_samples, theta, cfg, model, teacher_cache=teacher_val)
        if not np.isfinite(val_loss):
            raise TrainingDiverged(f"validation loss {val_loss} at epoch {epoch}")
        log.append(TrainLogRow(epoch=epoch, train_loss=train_loss, val_loss=val_loss))
        if val_loss < best[0]:
            best = (val_loss, epoch, theta.copy())
    return TrainResult(theta=best[2], log=log, best_epoch=best[1], best_val_loss=best[0])
