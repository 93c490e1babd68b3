"""Evaluation metrics and the multi-task relative-improvement score."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .net import MultiTaskNet, predict

DIRECTIONS = ("higher_better", "lower_better")


@dataclass(frozen=True)
class MetricRecord:
    task_id: str
    value: float
    direction: str

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise ValueError(f"direction must be one of {DIRECTIONS}, got {self.direction!r}")
        if not math.isfinite(self.value):
            raise ValueError(f"metric for {self.task_id!r} is not finite")


def delta_mtl(multi, single) -> float:
    """Mean signed relative gap to single-task references, in percent.

    Lower-is-better metrics flip sign, so an improvement on any task counts
    positively.
    """
    multi, single = list(multi), list(single)
    if len(multi) != len(single) or not multi:
        raise ValueError("need the same non-zero number of multi-task and single-task records")
    total = 0.0
    for m, s in zip(multi, single):
        if m.direction != s.direction:
            raise ValueError(f"direction mismatch for {m.task_id!r}/{s.task_id!r}")
        if s.value == 0:
            raise ValueError(f"single-task reference for {s.task_id!r} is zero")
        sign = -1.0 if m.direction == "lower_better" else 1.0
        total += sign * (m.value - s.value) / s.value
    return 100.0 * total / len(multi)


def eval_net(net: MultiTaskNet, dataset) -> list[MetricRecord]:
    """MSE for regression tasks, accuracy in percent for classification tasks."""
    x = np.asarray(dataset.x)
    if x.shape[0] == 0:
        raise ValueError("cannot evaluate on an empty split")
    _, outputs = predict(net, x)
    records = []
    for t in net.tasks:
        out = outputs[t.task_id]
        y = np.asarray(dataset.y[t.task_id])
        if t.loss_kind == "mse":
            value = float(np.mean((out - y.reshape(out.shape)) ** 2))
            records.append(MetricRecord(t.task_id, value, "lower_better"))
        else:
            value = 100.0 * float(np.mean(np.argmax(out, axis=1) == y))
            records.append(MetricRecord(t.task_id, value, "higher_better"))
    return records


def eval_losses(net: MultiTaskNet, dataset) -> dict[str, float]:
    """Mean training-objective loss per task (MSE or cross-entropy)."""
    _, outputs = predict(net, dataset.x)
    losses = {}
    for t in net.tasks:
        out = outputs[t.task_id]
        y = np.asarray(dataset.y[t.task_id])
        if t.loss_kind == "mse":
            losses[t.task_id] = float(np.mean((out - y.reshape(out.shape)) ** 2))
        else:
            shifted = out - out.max(axis=1, keepdims=True)
            lse = np.log(np.exp(shifted).sum(axis=1))
            losses[t.task_id] = float(np.mean(lse - shifted[np.arange(len(y)), y]))
    return losses
