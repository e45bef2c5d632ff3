"""Optimizer, curriculum training loop, evaluation, and the scaling benchmark."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import tasks as task_mod
from .autodiff import Tape, ValidationError
from .network import rse_forward


class TrainingDiverged(RuntimeError):
    """Loss stayed above 10x its initial value for 1000 consecutive steps."""


@dataclass
class TrainMetrics:
    """One per-step (or per-evaluation) record of the training stream."""

    step: int
    bucket: int = 0
    train_loss: float = float("nan")
    eval_length: int = 0
    per_symbol_acc: float = float("nan")
    seq_acc: float = float("nan")
    wallclock_s: float = 0.0


class Optimizer:
    """Adam / RAdam over a model's named parameters.

    RAdam applies the variance-rectification factor once the moving
    second moment is tractable (rho > 4) and falls back to a plain
    bias-corrected momentum step before that.
    """

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, variant="radam"):
        if variant not in ("adam", "radam"):
            raise ValidationError(f"unknown optimizer variant {variant!r}")
        self.named = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.variant = variant
        self.step_count = 0
        self.m = [np.zeros_like(t.data) for _, t in self.named]
        self.v = [np.zeros_like(t.data) for _, t in self.named]
        self.rho_inf = 2.0 / (1.0 - self.beta2) - 1.0

    def step(self):
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** t
        bc2 = 1.0 - b2 ** t
        rho = self.rho_inf - 2.0 * t * b2 ** t / bc2
        rectified = self.variant == "adam" or rho > 4.0
        if rectified and self.variant == "radam":
            r_num = (rho - 4.0) * (rho - 2.0) * self.rho_inf
            r_den = (self.rho_inf - 4.0) * (self.rho_inf - 2.0) * rho
            rect = np.sqrt(r_num / r_den)
        else:
            rect = 1.0
        for (name, p), m, v in zip(self.named, self.m, self.v):
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise ValidationError(f"non-finite gradient for parameter {name!r}")
            m += (1.0 - b1) * (g - m)
            v += (1.0 - b2) * (g * g - v)
            m_hat = m / bc1
            if rectified:
                v_hat = np.sqrt(v / bc2)
                p.data -= (self.lr * rect * m_hat / (v_hat + self.eps)).astype(p.data.dtype)
            else:
                p.data -= (self.lr * m_hat).astype(p.data.dtype)

    def zero_grad(self):
        for _, p in self.named:
            p.zero_grad()


def clip_gradients(named, max_norm):
    """Scale all gradients so the global norm is at most max_norm."""
    if max_norm is None or max_norm <= 0:
        return 0.0
    total = 0.0
    for _, p in named:
        if p.grad is not None:
            total += float((p.grad.astype(np.float64) ** 2).sum())
    norm = np.sqrt(total)
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for _, p in named:
            if p.grad is not None:
                p.grad *= p.grad.dtype.type(scale)
    return norm


def batch_accuracy(logits, targets, masks):
    """(per-symbol, per-sequence) accuracy over masked positions."""
    pred = logits.argmax(axis=-1)
    hit = (pred == targets) & (masks > 0)
    per_symbol = hit.sum() / max(1, masks.sum())
    seq_ok = (hit.sum(axis=-1) == masks.sum(axis=-1)).mean()
    return float(per_symbol), float(seq_ok)


def train_step(model, optimizer, inputs, targets, masks, clip=5.0):
    """One forward/backward/update over a padded batch; returns (loss, accs)."""
    model.zero_grads()
    with Tape() as tape:
        logits = rse_forward(model, inputs)
        loss = ad.softmax_xent(logits, targets, masks)
        tape.backward(loss)
    clip_gradients(optimizer.named, clip)
    optimizer.step()
    per_symbol, seq = batch_accuracy(logits.data, targets, masks)
    return float(loss.data), per_symbol, seq


def evaluate(model, task, length, n_examples=128, seed=0, batch_size=32, alphabet=None):
    """Accuracy over freshly generated examples padded to `length`."""
    if alphabet is None:
        alphabet = task_mod.SORT_ALPHABET
    rng = task_mod.stream_rng(seed, "eval", length)
    hits = 0
    covered = 0
    seq_hits = 0
    done = 0
    while done < n_examples:
        b = min(batch_size, n_examples - done)
        inputs, targets, masks = task_mod.batch_for_bucket(task, length, b, rng, alphabet)
        logits = rse_forward(model, inputs)  # no tape active: inference mode
        pred = logits.data.argmax(axis=-1)
        hit = (pred == targets) & (masks > 0)
        hits += int(hit.sum())
        covered += int(masks.sum())
        seq_hits += int((hit.sum(axis=-1) == masks.sum(axis=-1)).sum())
        done += b
    return hits / max(1, covered), seq_hits / max(1, n_examples)


def train_loop(
    model,
    task,
    steps,
    seed=0,
    batch_size=32,
    lr=1e-3,
    betas=(0.9, 0.999),
    eps=1e-8,
    clip=5.0,
    optimizer_variant="radam",
    buckets=None,
    eval_every=500,
    eval_lengths=(64, 128, 256),
    eval_examples=128,
    early_stop_acc=None,
    early_stop_length=None,
    alphabet=None,
    timing=False,
):
    """Generator of TrainMetrics: one record per step plus evaluation records.

    Each step samples a bucket from the curriculum, draws a batch that
    fits exactly that bucket, and updates the shared weights through the
    length-specific instantiation. Deterministic given the seed. Raises
    TrainingDiverged if the loss sits above 10x its initial value for
    1000 consecutive steps.
    """
    if task not in task_mod.TASKS:
        raise ValidationError(f"unknown task {task!r}")
    if buckets is None:
        buckets = task_mod.TRAIN_BUCKETS
    if alphabet is None:
        alphabet = task_mod.SORT_ALPHABET
    data_rng = task_mod.stream_rng(seed, "data")
    optimizer = Optimizer(
        model.named_parameters(), lr=lr, betas=betas, eps=eps, variant=optimizer_variant
    )
    start = time.perf_counter()
    initial_loss = None
    high_count = 0
    stop = False
    for step in range(steps):
        bucket = task_mod.curriculum_schedule(step, steps, seed, buckets)
        inputs, targets, masks = task_mod.batch_for_bucket(
            task, bucket, batch_size, data_rng, alphabet
        )
        loss, per_symbol, seq = train_step(model, optimizer, inputs, targets, masks, clip)
        if initial_loss is None:
            initial_loss = loss
        if loss > 10.0 * initial_loss:
            high_count += 1
            if high_count >= 1000:
                raise TrainingDiverged(
                    f"loss {loss:.4f} above 10x initial {initial_loss:.4f} "
                    f"for 1000 consecutive steps (step {step})"
                )
        else:
            high_count = 0
        elapsed = time.perf_counter() - start if timing else 0.0
        yield TrainMetrics(
            step=step, bucket=bucket, train_loss=loss,
            per_symbol_acc=per_symbol, seq_acc=seq, wallclock_s=elapsed,
        )
        if eval_every and (step + 1) % eval_every == 0:
            for length in eval_lengths:
                acc, seq_acc = evaluate(
                    model, task, length, n_examples=eval_examples,
                    seed=seed, alphabet=alphabet,
                )
                elapsed = time.perf_counter() - start if timing else 0.0
                yield TrainMetrics(
                    step=step, eval_length=length,
                    per_symbol_acc=acc, seq_acc=seq_acc, wallclock_s=elapsed,
                )
                if (
                    early_stop_acc is not None
                    and length == (early_stop_length or eval_lengths[-1])
                    and acc >= early_stop_acc
                ):
                    stop = True
        if stop:
            return


def bench_forward(model, lengths, repeats=3, batch_size=1, warmup=1):
    """Mean wall-clock seconds per forward pass at each length.

    Returns a list of (length, [per-repeat seconds]); lengths that do not
    fit in memory are reported with an empty list instead of crashing.
    """
    results = []
    for n in lengths:
        if model.embedding is not None:
            x = np.zeros((batch_size, n), dtype=np.int64)
        elif model.convs is not None:
            x = np.zeros((batch_size, n, 1), dtype=model.units[0].Z.dtype)
        else:
            x = np.zeros((batch_size, n, model.config.input_dim), dtype=model.units[0].Z.dtype)
        times = []
        try:
            for _ in range(warmup):
                rse_forward(model, x)
            for _ in range(repeats):
                t0 = time.perf_counter()
                rse_forward(model, x)
                times.append(time.perf_counter() - t0)
        except MemoryError:
            times = []
        results.append((n, times))
    return results


def fit_latency_exponent(results):
    """Least-squares slope of log2(latency) vs log2(n), with a 95% CI over repeats.

    Returns (slope, half_width); half_width is 0 when only one repeat ran.
    """
    usable = [(n, ts) for n, ts in results if ts]
    if len(usable) < 2:
        raise ValidationError("need at least two benchmarked lengths")
    n_repeats = min(len(ts) for _, ts in usable)
    slopes = []
    for r in range(n_repeats):
        xs = np.log2([n for n, _ in usable])
        ys = np.log2([ts[r] for _, ts in usable])
        slopes.append(np.polyfit(xs, ys, 1)[0])
    slopes = np.array(slopes)
    mean = float(slopes.mean())
    if len(slopes) > 1:
        half = float(1.96 * slopes.std(ddof=1) / np.sqrt(len(slopes)))
    else:
        half = 0.0
    return mean, half
