"""Training, evaluation and benchmarking harness.

Poly learning-rate schedule, plain or hard-example-mined cross-entropy,
single/multi-scale prediction, and the forward-latency benchmark protocol
(mean of repeated single-image passes, plus MACs/s from the cost model).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import ops
from .analysis import count_flops
from .autograd import backward, no_grad
from .data import SampleBatch, resize_bilinear
from .errors import ConfigError, InputError, TrainingDiverged
from .metrics import ConfusionMatrix
from .net import ExecutableNet
from .optim import SGD

IGNORE_INDEX = 255

# Hard-example mining defaults: keep pixels whose predicted probability of
# the true class is below 0.7, but never fewer than 1/16 of the valid pixels.
OHEM_PROB_THRESHOLD = 0.7
OHEM_MIN_KEPT_FRACTION = 1.0 / 16.0


@dataclass(frozen=True)
class LrSchedule:
    base_lr: float
    total_iter: int
    power: float = 0.9

    def __post_init__(self):
        if self.base_lr < 0:
            raise ConfigError(f"base_lr must be >= 0, got {self.base_lr}")
        if self.total_iter < 1:
            raise ConfigError(f"total_iter must be >= 1, got {self.total_iter}")


def poly_lr(sched: LrSchedule, iteration: int) -> float:
    """lr = base_lr * (1 - iter/total_iter) ** power."""
    if not 0 <= iteration <= sched.total_iter:
        raise InputError(
            f"iteration {iteration} outside [0, {sched.total_iter}]")
    return sched.base_lr * (1.0 - iteration / sched.total_iter) ** sched.power


# --- hard example mining ------------------------------------------------------------

def ohem_select(pixel_losses: np.ndarray, threshold: float, min_kept: int,
                valid: Optional[np.ndarray] = None) -> np.ndarray:
    """Boolean mask of mined pixels: everything above the loss threshold,
    topped up to at least ``min_kept`` by the highest remaining losses."""
    if min_kept < 1:
        raise ConfigError(f"min_kept must be >= 1, got {min_kept}")
    losses = np.asarray(pixel_losses, dtype=np.float64)
    if valid is None:
        valid = np.ones(losses.shape, dtype=bool)
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise InputError("ohem: empty pixel set")
    keep = valid & (losses > threshold)
    min_kept = min(min_kept, n_valid)
    if int(keep.sum()) < min_kept:
        flat = np.where(valid.reshape(-1), losses.reshape(-1), -np.inf)
        order = np.argsort(-flat, kind="stable")[:min_kept]
        keep = np.zeros(losses.size, dtype=bool)
        keep[order] = True
        keep = keep.reshape(losses.shape)
    return keep


def ohem_loss(pixel_losses: np.ndarray, threshold: float, min_kept: int,
              valid: Optional[np.ndarray] = None) -> float:
    """Mean loss over the mined pixel set."""
    keep = ohem_select(pixel_losses, threshold, min_kept, valid)
    return float(np.asarray(pixel_losses, dtype=np.float64)[keep].mean())


def _loss_for_batch(net: ExecutableNet, batch: SampleBatch, loss_kind: str,
                    step: int, seed: int):
    logits = net.forward(batch.images, train=True, seed=(seed, step))
    if loss_kind == "ce":
        loss, _ = ops.softmax_cross_entropy(logits, batch.labels, IGNORE_INDEX)
        return loss
    if loss_kind == "ohem":
        with no_grad():
            _, pix = ops.softmax_cross_entropy(logits.detach(), batch.labels, IGNORE_INDEX)
        valid = batch.labels != IGNORE_INDEX
        min_kept = max(1, int(math.ceil(valid.sum() * OHEM_MIN_KEPT_FRACTION)))
        keep = ohem_select(pix, -math.log(OHEM_PROB_THRESHOLD), min_kept, valid)
        loss, _ = ops.softmax_cross_entropy(logits, batch.labels, IGNORE_INDEX,
                                            keep_mask=keep)
        return loss
    raise ConfigError(f"unknown loss kind {loss_kind!r}; use 'ce' or 'ohem'")


# --- training loop ---------------------------------------------------------------------

def train_loop(net: ExecutableNet, source, sched: LrSchedule, loss_kind: str = "ce",
               steps: Optional[int] = None, seed: int = 0,
               momentum: float = 0.9, weight_decay: float = 1e-4,
               start_step: int = 0, optimizer: Optional[SGD] = None,
               eval_every: int = 0,
               eval_fn: Optional[Callable[[ExecutableNet], float]] = None,
               trace_sink: Optional[Callable[[dict], None]] = None) -> List[dict]:
    """Deterministic SGD loop; returns the per-step metrics trace."""
    steps = sched.total_iter if steps is None else steps
    opt = optimizer or SGD(net.parameters(), momentum=momentum, weight_decay=weight_decay)
    trace: List[dict] = []
    for step in range(start_step, start_step + steps):
        lr = poly_lr(sched, min(step, sched.total_iter))
        batch = source.batch(step)
        loss = _loss_for_batch(net, batch, loss_kind, step, seed)
        loss_val = loss.item()
        if not np.isfinite(loss_val):
            raise TrainingDiverged(f"non-finite loss {loss_val} at step {step}")
        backward(loss)
        opt.step(lr)
        opt.zero_grad()
        rec = {"step": step, "lr": lr, "loss": loss_val}
        if eval_every and eval_fn and (step + 1) % eval_every == 0:
            rec["miou"] = eval_fn(net)
        trace.append(rec)
        if trace_sink:
            trace_sink(rec)
    return trace


# --- evaluation ------------------------------------------------------------------------

def predict_probs(net: ExecutableNet, images, seed: int = 0) -> np.ndarray:
    """Softmax class probabilities at input resolution (single scale)."""
    logits = net.forward(images, train=False, seed=seed, record=False)
    return ops.softmax_probs(logits.data)


def _pad_to_multiple(img: np.ndarray, multiple: int):
    h, w = img.shape[-2:]
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph or pw:
        img = np.pad(img, ((0, 0), (0, 0), (0, ph), (0, pw)))
    return img, h, w


def multi_scale_predict(net: ExecutableNet, images, scales: Sequence[float] = (1.0,),
                        flip: bool = False) -> np.ndarray:
    """Average of softmax probability maps over scaled (and optionally
    horizontally flipped) inputs, resized back to the input resolution."""
    if not scales:
        raise ConfigError("multi_scale_predict needs at least one scale")
    imgs = images.data if hasattr(images, "data") else np.asarray(images)
    n, c, h, w = imgs.shape
    acc = None
    for s in scales:
        sh, sw = max(1, round(h * s)), max(1, round(w * s))
        scaled = resize_bilinear(imgs, sh, sw)
        padded, oh, ow = _pad_to_multiple(scaled, net.stride_divisor)
        variants = [padded]
        if flip:
            variants.append(padded[:, :, :, ::-1].copy())
        for vi, v in enumerate(variants):
            logits = net.forward(v, train=False, record=False).data
            logits = logits[:, :, :oh, :ow]
            if vi == 1:
                logits = logits[:, :, :, ::-1]
            probs = ops.softmax_probs(logits)
            probs = resize_bilinear(probs, h, w)
            acc = probs if acc is None else acc + probs
    return acc / (len(scales) * (2 if flip else 1))


def evaluate(net: ExecutableNet, batches: Sequence[SampleBatch],
             scales: Sequence[float] = (1.0,), flip: bool = False,
             ignore_index: int = IGNORE_INDEX):
    """Confusion-matrix evaluation; returns (miou, per_class, pixel_acc)."""
    num_classes = net.graph.meta["num_classes"]
    cm = ConfusionMatrix(num_classes, ignore_index)
    for batch in batches:
        if list(scales) == [1.0] and not flip:
            probs = predict_probs(net, batch.images)
        else:
            probs = multi_scale_predict(net, batch.images, scales, flip)
        cm.update(probs.argmax(axis=1), batch.labels)
    per_class, mean = cm.iou()
    return mean, per_class, cm.pixel_accuracy()


# --- timing ------------------------------------------------------------------------------

def bench_forward(net: ExecutableNet, input_size, repetitions: int = 100,
                  seed: int = 0) -> Dict:
    """Mean/median/std of single-image forward latency after one warm-up
    pass, with MACs/s derived from the analytic cost model."""
    if repetitions < 1:
        raise ConfigError(f"repetitions must be >= 1, got {repetitions}")
    h, w = input_size
    x = np.random.default_rng(seed).random((1, 3, h, w))
    net.forward(x, train=False, record=False)  # warm-up
    times = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        net.forward(x, train=False, record=False)
        times.append(time.perf_counter() - t0)
    times_arr = np.array(times)
    macs = count_flops(net.graph, (h, w)).total_macs
    mean = float(times_arr.mean())
    return {
        "input_size": [h, w],
        "repetitions": repetitions,
        "mean_s": mean,
        "median_s": float(np.median(times_arr)),
        "std_s": float(times_arr.std()),
        "min_s": float(times_arr.min()),
        "max_s": float(times_arr.max()),
        "macs": int(macs),
        "macs_per_s": float(macs / mean),
    }
