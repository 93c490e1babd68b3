"""Hard-parameter-sharing multi-task MLP.

One tanh encoder maps inputs to a shared feature ``z``; every task owns a
small ReLU decoder on top of ``z`` and a log-variance ``eta = ln(sigma^2)``
that carries its homoscedastic uncertainty.
"""
from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .grad import Graph, NodeRef

PRIMARY = "primary"
AUXILIARY = "auxiliary"
LOSS_KINDS = ("mse", "softmax_ce")

# 1 / (2 sigma^2) = 0.1 at initialization
INIT_DECODER_WEIGHT = 0.1
INIT_ETA = math.log(1.0 / (2.0 * INIT_DECODER_WEIGHT))


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    role: str = AUXILIARY
    loss_kind: str = "mse"
    decoder_widths: tuple[int, ...] = (16, 1)
    metric_direction: str | None = None

    def __post_init__(self):
        if self.role not in (PRIMARY, AUXILIARY):
            raise ValueError(f"task {self.task_id!r}: unknown role {self.role!r}")
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"task {self.task_id!r}: unknown loss kind {self.loss_kind!r}")
        if not self.decoder_widths or any(int(w) <= 0 for w in self.decoder_widths):
            raise ValueError(f"task {self.task_id!r}: decoder widths must be positive")
        object.__setattr__(self, "decoder_widths", tuple(int(w) for w in self.decoder_widths))
        if self.metric_direction is None:
            direction = "lower_better" if self.loss_kind == "mse" else "higher_better"
            object.__setattr__(self, "metric_direction", direction)

    @property
    def is_primary(self) -> bool:
        return self.role == PRIMARY


def validate_tasks(tasks) -> None:
    ids = [t.task_id for t in tasks]
    if len(set(ids)) != len(ids):
        raise ValueError(f"task ids must be unique, got {ids}")
    n_primary = sum(t.is_primary for t in tasks)
    if n_primary != 1:
        raise ValueError(f"exactly one primary task required, found {n_primary}")


@dataclass
class MultiTaskNet:
    tasks: tuple[TaskSpec, ...]
    encoder_params: list[np.ndarray]
    decoder_params: dict[str, list[np.ndarray]]
    eta: dict[str, float]

    @property
    def task_ids(self) -> list[str]:
        return [t.task_id for t in self.tasks]

    @property
    def primary(self) -> str:
        return next(t.task_id for t in self.tasks if t.is_primary)

    @property
    def auxiliaries(self) -> list[str]:
        return [t.task_id for t in self.tasks if not t.is_primary]

    def task(self, task_id: str) -> TaskSpec:
        for t in self.tasks:
            if t.task_id == task_id:
                return t
        raise KeyError(f"unknown task {task_id!r}")

    def copy(self) -> "MultiTaskNet":
        return MultiTaskNet(
            self.tasks,
            [p.copy() for p in self.encoder_params],
            {k: [p.copy() for p in v] for k, v in self.decoder_params.items()},
            dict(self.eta),
        )


@dataclass
class ParamGrads:
    """Gradients laid out like the parameters of a :class:`MultiTaskNet`."""

    encoder: list[np.ndarray] = field(default_factory=list)
    decoder: dict[str, list[np.ndarray]] = field(default_factory=dict)
    eta: dict[str, float] = field(default_factory=dict)


@dataclass
class ForwardPass:
    graph: Graph
    z_node: NodeRef
    encoder_leaves: list[NodeRef]
    decoder_leaves: dict[str, list[NodeRef]]
    output_nodes: dict[str, NodeRef]
    loss_nodes: dict[str, NodeRef]
    cache: dict = field(default_factory=dict, repr=False)

    def loss(self, task_id: str) -> float:
        return float(self.graph.value(self.loss_nodes[task_id]))


def task_seed(seed: int, name: str) -> np.random.SeedSequence:
    """Independent, order-free random stream for one named component."""
    return np.random.SeedSequence([int(seed), zlib.crc32(name.encode("utf-8"))])


def _init_mlp(widths, rng: np.random.Generator) -> list[np.ndarray]:
    params = []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        params.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        params.append(np.zeros(fan_out))
    return params


def init_net(encoder_widths, tasks, seed: int) -> MultiTaskNet:
    """``encoder_widths`` runs from the input dimension to the shared-feature size."""
    tasks = tuple(tasks)
    validate_tasks(tasks)
    widths = [int(w) for w in encoder_widths]
    if len(widths) < 2 or any(w <= 0 for w in widths):
        raise ValueError("encoder widths need an input and an output size, all positive")
    encoder = _init_mlp(widths, np.random.default_rng(task_seed(seed, "__encoder__")))
    decoders = {
        t.task_id: _init_mlp(
            [widths[-1], *t.decoder_widths], np.random.default_rng(task_seed(seed, t.task_id))
        )
        for t in tasks
    }
    return MultiTaskNet(tasks, encoder, decoders, {t.task_id: INIT_ETA for t in tasks})


def sigma(net: MultiTaskNet, task_id: str) -> float:
    if task_id not in net.eta:
        raise KeyError(f"unknown task {task_id!r}")
    return math.exp(net.eta[task_id] / 2.0)


def _mlp_nodes(g: Graph, h: NodeRef, leaves: list[NodeRef], hidden) -> NodeRef:
    n_layers = len(leaves) // 2
    for i in range(n_layers):
        h = g.add(g.matmul(h, leaves[2 * i]), leaves[2 * i + 1])
        if i < n_layers - 1 or hidden == "tanh_all":
            h = g.tanh(h) if hidden.startswith("tanh") else g.relu(h)
    return h


def _target_array(spec: TaskSpec, y, n: int):
    if spec.loss_kind == "softmax_ce":
        labels = np.asarray(y)
        if labels.shape != (n,):
            raise ValueError(f"task {spec.task_id!r}: expected {n} class labels")
        return labels.astype(np.int64)
    arr = np.asarray(y, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.shape != (n, spec.decoder_widths[-1]):
        raise ValueError(f"task {spec.task_id!r}: target shape {arr.shape} does not match output")
    return arr


def forward(net: MultiTaskNet, batch_x, batch_y: Mapping) -> ForwardPass:
    """Build a fresh graph for one batch; losses are batch means."""
    x = np.asarray(batch_x, dtype=np.float64)
    missing = [t for t in net.task_ids if t not in batch_y]
    if missing:
        raise ValueError(f"missing targets for tasks {missing}")
    if x.ndim != 2 or x.shape[1] != net.encoder_params[0].shape[0]:
        raise ValueError(f"input shape {x.shape} does not match encoder")
    n = x.shape[0]
    targets = {t.task_id: _target_array(t, batch_y[t.task_id], n) for t in net.tasks}

    g = Graph()
    x_node = g.leaf(x)
    enc_leaves = [g.leaf(p, requires_grad=True) for p in net.encoder_params]
    z = _mlp_nodes(g, x_node, enc_leaves, "tanh_all")

    dec_leaves, outputs, losses = {}, {}, {}
    for t in net.tasks:
        leaves = [g.leaf(p, requires_grad=True) for p in net.decoder_params[t.task_id]]
        out = _mlp_nodes(g, z, leaves, "relu")
        if t.loss_kind == "mse":
            loss = g.mse(out, targets[t.task_id])
        else:
            loss = g.softmax_ce(out, targets[t.task_id])
        dec_leaves[t.task_id] = leaves
        outputs[t.task_id] = out
        losses[t.task_id] = loss
    return ForwardPass(g, z, enc_leaves, dec_leaves, outputs, losses)


def predict(net: MultiTaskNet, x) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Graph-free forward returning ``(z, outputs)``; used for evaluation."""
    h = np.asarray(x, dtype=np.float64)
    enc = net.encoder_params
    for i in range(0, len(enc), 2):
        h = np.tanh(h @ enc[i] + enc[i + 1])
    z = h
    outputs = {}
    for tid, params in net.decoder_params.items():
        h = z
        for i in range(0, len(params), 2):
            h = h @ params[i] + params[i + 1]
            if i < len(params) - 2:
                h = np.maximum(h, 0.0)
        outputs[tid] = h
    return z, outputs


def apply_gradients(net: MultiTaskNet, grads: ParamGrads, lr: float, freeze=(), lr_eta=None) -> None:
    """Plain gradient descent in place. Frozen decoders stay put; their eta still moves."""
    lr_eta = lr if lr_eta is None else lr_eta
    freeze = set(freeze)
    if grads.encoder:
        _descend(net.encoder_params, grads.encoder, lr)
    for tid, gs in grads.decoder.items():
        if tid not in net.decoder_params:
            raise KeyError(f"unknown task {tid!r}")
        if tid not in freeze:
            _descend(net.decoder_params[tid], gs, lr)
    for tid, g in grads.eta.items():
        if tid not in net.eta:
            raise KeyError(f"unknown task {tid!r}")
        net.eta[tid] = net.eta[tid] - lr_eta * float(g)


def _descend(params: list[np.ndarray], grads: list[np.ndarray], lr: float) -> None:
    if len(params) != len(grads):
        raise ValueError("gradient list does not match parameter list")
    for p, g in zip(params, grads):
        g = np.asarray(g)
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
    for p, g in zip(params, grads):
        p -= lr * g


def save_params(net: MultiTaskNet, path) -> None:
    doc = {
        "tasks": [
            {
                "task_id": t.task_id,
                "role": t.role,
                "loss_kind": t.loss_kind,
                "decoder_widths": list(t.decoder_widths),
                "metric_direction": t.metric_direction,
            }
            for t in net.tasks
        ],
        "encoder": [p.tolist() for p in net.encoder_params],
        "decoder": {k: [p.tolist() for p in v] for k, v in net.decoder_params.items()},
        "eta": net.eta,
    }
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_params(path) -> MultiTaskNet:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    tasks = tuple(TaskSpec(**t) for t in doc["tasks"])
    return MultiTaskNet(
        tasks,
        [np.asarray(p, dtype=np.float64) for p in doc["encoder"]],
        {k: [np.asarray(p, dtype=np.float64) for p in v] for k, v in doc["decoder"].items()},
        {k: float(v) for k, v in doc["eta"].items()},
    )
