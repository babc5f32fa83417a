"""Confusion matrix and mean intersection-over-union."""

from __future__ import annotations

import numpy as np

from .errors import InputError


class ConfusionMatrix:
    def __init__(self, num_classes: int, ignore_index: int = 255):
        if num_classes < 2:
            raise InputError(f"need at least 2 classes, got {num_classes}")
        self.num_classes = num_classes
        self.ignore_index = ignore_index
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64)

    def update(self, pred, true):
        pred = np.asarray(pred).reshape(-1)
        true = np.asarray(true).reshape(-1)
        if pred.shape != true.shape:
            raise InputError(f"prediction/label size mismatch: {pred.shape} vs {true.shape}")
        valid = true != self.ignore_index
        pred, true = pred[valid], true[valid]
        if ((true < 0) | (true >= self.num_classes)).any():
            raise InputError("ground-truth labels out of range")
        if ((pred < 0) | (pred >= self.num_classes)).any():
            raise InputError("predicted labels out of range")
        k = self.num_classes
        self.counts += np.bincount(k * true + pred, minlength=k * k).reshape(k, k)
        return self

    def reset(self):
        self.counts[:] = 0

    def iou(self):
        """Per-class IoU (NaN for classes absent from both GT and prediction)
        and the mean over present classes."""
        tp = np.diag(self.counts).astype(np.float64)
        fp = self.counts.sum(axis=0) - tp
        fn = self.counts.sum(axis=1) - tp
        union = tp + fp + fn
        per_class = np.full(self.num_classes, np.nan)
        present = union > 0
        per_class[present] = tp[present] / union[present]
        if not present.any():
            raise InputError("no scored pixels in the confusion matrix")
        return per_class, float(per_class[present].mean())

    def pixel_accuracy(self) -> float:
        total = self.counts.sum()
        if total == 0:
            raise InputError("no scored pixels in the confusion matrix")
        return float(np.diag(self.counts).sum() / total)


def update_confusion(cm: ConfusionMatrix, pred, true) -> ConfusionMatrix:
    return cm.update(pred, true)


def miou(cm: ConfusionMatrix):
    """Returns (mean IoU, per-class IoU array)."""
    per_class, mean = cm.iou()
    return mean, per_class
