"""Seeded synthetic multi-task benchmark.

Inputs ``x ~ N(0, I)`` pass through a fixed random feature map
``h = tanh(gain * x @ U)`` with orthonormal ``U``, so the latent features are
i.i.d. with zero mean and a diagonal covariance. Every task reads out one
direction of ``h``::

    w_t = rho_t * c + sqrt(1 - rho_t^2) * d_t

where ``c`` is shared by all tasks and ``d_t`` is private and orthogonal to
``c`` and to every earlier task's private direction. ``rho_t = 1`` duplicates
the common signal, ``rho_t = 0`` gives a task uncorrelated with the others.
Regression targets are the standardized readout plus Gaussian noise;
classification targets bucket the noisy readout into ``n_classes`` quantile
bins. A ``corrupt_fraction`` of *training* labels can be replaced with junk,
which stands in for noisy pseudo-labelled auxiliary tasks.

Each component draws from its own seeded stream, so adding a task to a
configuration leaves the data of the tasks before it unchanged.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .net import AUXILIARY, PRIMARY, TaskSpec, task_seed

FEATURE_GAIN = 1.5


@dataclass(frozen=True)
class SynthTask:
    task_id: str
    kind: str = "mse"
    relatedness: float = 0.8
    noise_std: float = 0.1
    corrupt_fraction: float = 0.0
    n_classes: int = 5
    role: str = AUXILIARY
    target_scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("mse", "softmax_ce"):
            raise ValueError(f"task {self.task_id!r}: unknown kind {self.kind!r}")
        if not 0.0 <= self.relatedness <= 1.0:
            raise ValueError(f"task {self.task_id!r}: relatedness must lie in [0, 1]")
        if not 0.0 <= self.corrupt_fraction <= 1.0:
            raise ValueError(f"task {self.task_id!r}: corrupt_fraction must lie in [0, 1]")
        if self.target_scale <= 0:
            raise ValueError(f"task {self.task_id!r}: target_scale must be positive")
        if self.noise_std < 0:
            raise ValueError(f"task {self.task_id!r}: noise_std must be non-negative")
        if self.kind == "softmax_ce" and self.n_classes < 2:
            raise ValueError(f"task {self.task_id!r}: need at least 2 classes")

    def spec(self, hidden: int = 16) -> TaskSpec:
        out = 1 if self.kind == "mse" else self.n_classes
        return TaskSpec(self.task_id, self.role, self.kind, (hidden, out))


@dataclass(frozen=True)
class SynthConfig:
    tasks: tuple[SynthTask, ...]
    n_train: int = 2000
    n_test: int = 500
    input_dim: int = 16
    latent_dim: int = 8
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "tasks", tuple(self.tasks))
        if min(self.n_train, self.n_test, self.input_dim, self.latent_dim) <= 0:
            raise ValueError("sample counts and dimensions must be positive")
        if self.latent_dim > self.input_dim:
            raise ValueError("latent_dim cannot exceed input_dim")
        if not self.tasks:
            raise ValueError("at least one task is required")
        ids = [t.task_id for t in self.tasks]
        if len(set(ids)) != len(ids):
            raise ValueError(f"task ids must be unique, got {ids}")

    @property
    def primary(self) -> str:
        return next(t.task_id for t in self.tasks if t.role == PRIMARY)

    def task_specs(self, hidden: int = 16) -> list[TaskSpec]:
        return [t.spec(hidden) for t in self.tasks]

    def to_dict(self) -> dict:
        return {
            "n_train": self.n_train,
            "n_test": self.n_test,
            "input_dim": self.input_dim,
            "latent_dim": self.latent_dim,
            "seed": self.seed,
            "tasks": [t.__dict__.copy() for t in self.tasks],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SynthConfig":
        doc = dict(doc)
        tasks = tuple(SynthTask(**t) for t in doc.pop("tasks"))
        return cls(tasks=tasks, **doc)


@dataclass
class Dataset:
    x: np.ndarray
    y: dict[str, np.ndarray]
    split: str
    corrupted: dict[str, np.ndarray] = field(default_factory=dict)

    def __len__(self) -> int:
        return self.x.shape[0]

    def subset(self, idx) -> tuple[np.ndarray, dict[str, np.ndarray]]:
        return self.x[idx], {k: v[idx] for k, v in self.y.items()}


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def _readout_directions(cfg: SynthConfig) -> dict[str, np.ndarray]:
    common = _unit(np.random.default_rng(task_seed(cfg.seed, "__common__")).standard_normal(cfg.latent_dim))
    basis = [common]
    dirs = {}
    for t in cfg.tasks:
        raw = np.random.default_rng(task_seed(cfg.seed, t.task_id + "/head")).standard_normal(cfg.latent_dim)
        private = raw.copy()
        for b in basis:
            private -= (private @ b) * b
        if np.linalg.norm(private) < 1e-8:
            # latent space exhausted: only keep orthogonality to the common direction
            private = raw - (raw @ common) * common
        private = _unit(private)
        basis.append(private)
        rho = t.relatedness
        dirs[t.task_id] = rho * common + math.sqrt(max(0.0, 1.0 - rho * rho)) * private
    return dirs


def generate(cfg: SynthConfig) -> tuple[Dataset, Dataset]:
    """Return ``(train, test)``; fully determined by ``cfg``."""
    feat_rng = np.random.default_rng(task_seed(cfg.seed, "__features__"))
    q, _ = np.linalg.qr(feat_rng.standard_normal((cfg.input_dim, cfg.input_dim)))
    u = q[:, : cfg.latent_dim]

    x_rng = np.random.default_rng(task_seed(cfg.seed, "__inputs__"))
    x_train = x_rng.standard_normal((cfg.n_train, cfg.input_dim))
    x_test = x_rng.standard_normal((cfg.n_test, cfg.input_dim))
    h_train = np.tanh(FEATURE_GAIN * x_train @ u)
    h_test = np.tanh(FEATURE_GAIN * x_test @ u)

    dirs = _readout_directions(cfg)
    y_train, y_test, corrupted = {}, {}, {}
    for t in cfg.tasks:
        rng = np.random.default_rng(task_seed(cfg.seed, t.task_id + "/labels"))
        s_train = h_train @ dirs[t.task_id]
        s_test = h_test @ dirs[t.task_id]
        scale = float(np.std(s_train))
        s_train = s_train / scale + t.noise_std * rng.standard_normal(cfg.n_train)
        s_test = s_test / scale + t.noise_std * rng.standard_normal(cfg.n_test)
        if t.kind == "mse":
            tr, te = t.target_scale * s_train, t.target_scale * s_test
        else:
            cuts = np.quantile(s_train, np.arange(1, t.n_classes) / t.n_classes)
            tr = np.searchsorted(cuts, s_train).astype(np.int64)
            te = np.searchsorted(cuts, s_test).astype(np.int64)

        n_bad = int(round(t.corrupt_fraction * cfg.n_train))
        bad = np.sort(rng.permutation(cfg.n_train)[:n_bad])
        if n_bad:
            if t.kind == "mse":
                tr = tr.copy()
                tr[bad] = t.target_scale * rng.standard_normal(n_bad)
            else:
                tr = tr.copy()
                tr[bad] = rng.integers(0, t.n_classes, size=n_bad)
        corrupted[t.task_id] = bad
        y_train[t.task_id] = tr.reshape(-1, 1) if t.kind == "mse" else tr
        y_test[t.task_id] = te.reshape(-1, 1) if t.kind == "mse" else te
    return Dataset(x_train, y_train, "train", corrupted), Dataset(x_test, y_test, "test")


def export_csv(dataset: Dataset, directory) -> list[Path]:
    """Write ``inputs.csv`` plus one ``<task>.csv`` of targets per task."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    p = out / f"{dataset.split}_inputs.csv"
    with p.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i}" for i in range(dataset.x.shape[1])])
        w.writerows([[repr(float(v)) for v in row] for row in dataset.x])
    paths.append(p)
    for tid, y in dataset.y.items():
        p = out / f"{dataset.split}_{tid}.csv"
        with p.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow([tid])
            for v in np.asarray(y).reshape(len(y), -1):
                w.writerow([repr(v.item()) if v.size == 1 else " ".join(map(repr, v.tolist()))])
        paths.append(p)
    return paths


# -- built-in scenarios -----------------------------------------------------------

def _standard_tasks() -> list[SynthTask]:
    return [
        SynthTask("primary", "mse", relatedness=0.8, noise_std=0.5, role=PRIMARY),
        SynthTask("aux_reg", "mse", relatedness=0.8, noise_std=0.1),
        SynthTask("aux_cls", "softmax_ce", relatedness=0.8, noise_std=0.1, n_classes=5),
    ]


@dataclass(frozen=True)
class Scenario:
    name: str
    synth: SynthConfig
    encoder_widths: tuple[int, ...]
    decoder_hidden: int = 16
    freeze: tuple[str, ...] = ()
    expectations: dict = field(default_factory=dict)

    def task_specs(self) -> list[TaskSpec]:
        return self.synth.task_specs(self.decoder_hidden)


SCENARIOS = ("standard", "pseudo_noisy", "broken_decoder", "many_tasks")


def scenario(name: str, seed: int = 0) -> Scenario:
    """Built-in configuration plus the comparisons it is meant to exhibit."""
    key = str(name).strip().lower()
    widths = (16, 32, 2)
    if key == "standard":
        cfg = SynthConfig(tuple(_standard_tasks()), seed=seed)
        exp = {
            "ial_vs_uniform": "primary metric at least as good on >= 4 of 5 seeds and better in the mean",
            "ial_vs_fixed": "primary metric better in the mean than fixed(0.1)",
        }
        return Scenario(key, cfg, widths, expectations=exp)
    if key == "pseudo_noisy":
        tasks = _standard_tasks() + [
            # automatic labels come on their own scale, so under equal weights they dominate the loss
            SynthTask("pseudo_reg", "mse", relatedness=0.8, noise_std=0.1, corrupt_fraction=0.8, target_scale=2.0),
            SynthTask("pseudo_cls", "softmax_ce", relatedness=0.8, noise_std=0.1, corrupt_fraction=0.8),
        ]
        exp = {"robustness": "IAL loses less primary accuracy than uniform relative to 'standard'"}
        return Scenario(key, SynthConfig(tuple(tasks), seed=seed), widths, expectations=exp)
    if key == "broken_decoder":
        cfg = SynthConfig(tuple(_standard_tasks()), seed=seed)
        exp = {
            "frozen_sigma": "frozen task ends with a larger sigma than when trained",
            "frozen_weight": "frozen task's mean f(sigma) over the final quarter is lower",
            "ial_vs_uw": "IAL degrades less than uncertainty weighting under the same freeze",
        }
        return Scenario(key, cfg, widths, freeze=("aux_reg",), expectations=exp)
    if key == "many_tasks":
        tasks = [SynthTask("primary", "softmax_ce", relatedness=0.8, noise_std=0.3, role=PRIMARY)]
        rhos = (0.9, 0.8, 0.7, 0.6, 0.5, 0.3, 0.0)
        for i, rho in enumerate(rhos):
            kind = "softmax_ce" if i % 2 == 0 else "mse"
            tasks.append(SynthTask(f"aux{i + 1}", kind, relatedness=rho, noise_std=0.1))
        cfg = SynthConfig(tuple(tasks), input_dim=16, latent_dim=12, seed=seed)
        exp = {"ial_vs_uniform": "primary accuracy at least as good in the mean"}
        return Scenario(key, cfg, (16, 32, 3), expectations=exp)
    raise ValueError(f"unknown scenario {name!r}; built-ins: {', '.join(SCENARIOS)}")


def with_seed(sc: Scenario, seed: int) -> Scenario:
    return replace(sc, synth=replace(sc.synth, seed=seed))
