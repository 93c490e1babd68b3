"""Seeded experiment runs, per-epoch CSV logs and strategy comparison tables."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import statistics
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .balance import strategy_registry
from .ial import f_weight
from .metrics import MetricRecord, delta_mtl, eval_losses, eval_net
from .net import AUXILIARY, PRIMARY, init_net, sigma, task_seed
from .synth import Scenario, SynthConfig, generate, scenario, with_seed

log = logging.getLogger(__name__)

CSV_SCHEMA = "ial-run-v1"
SUMMARY_SCHEMA = "ial-summary-v1"
TASK_COLUMNS = (
    "train_loss",
    "test_metric",
    "sigma",
    "f_sigma",
    "decoder_weight",
    "encoder_weight",
    "grad_norm",
    "grad_norm_normalized",
)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    scenario: str | dict = "standard"
    strategy: str = "ial"
    strategy_params: dict = field(default_factory=dict)
    label: str | None = None
    primary: str | None = None
    freeze: tuple[str, ...] | None = None
    epochs: int = 200
    batch_size: int = 64
    lr_params: float = 0.05
    lr_eta: float = 0.025
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    out: str = "runs"

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if self.freeze is not None:
            object.__setattr__(self, "freeze", tuple(self.freeze))
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if self.batch_size <= 0:
            raise ConfigError("batch_size must be positive")
        if self.lr_params <= 0 or self.lr_eta <= 0:
            raise ConfigError("learning rates must be positive")
        if not self.seeds:
            raise ConfigError("at least one seed is required")

    @property
    def name(self) -> str:
        return self.label or self.strategy.lower()

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "RunConfig":
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            doc = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON ({exc})") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"{p}: top level must be an object")
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "strategy": self.strategy,
            "strategy_params": self.strategy_params,
            "label": self.label,
            "primary": self.primary,
            "freeze": list(self.freeze) if self.freeze is not None else None,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "lr_params": self.lr_params,
            "lr_eta": self.lr_eta,
            "seeds": list(self.seeds),
        }


def output_root(cfg: RunConfig) -> Path:
    return Path(os.environ.get("IAL_OUT") or cfg.out)


def resolve_scenario(cfg: RunConfig, seed: int) -> Scenario:
    if isinstance(cfg.scenario, str):
        try:
            sc = scenario(cfg.scenario, seed)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    else:
        doc = dict(cfg.scenario)
        try:
            synth = SynthConfig.from_dict(doc["synth"])
            sc = Scenario(
                doc.get("name", "inline"),
                synth,
                tuple(doc.get("encoder_widths", (synth.input_dim, 32, synth.latent_dim))),
                int(doc.get("decoder_hidden", 16)),
                tuple(doc.get("freeze", ())),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid inline scenario: {exc}") from exc
        sc = with_seed(sc, seed)
    if cfg.primary is not None:
        ids = [t.task_id for t in sc.synth.tasks]
        if cfg.primary not in ids:
            raise ConfigError(f"primary task {cfg.primary!r} not in scenario tasks {ids}")
        tasks = tuple(
            replace(t, role=PRIMARY if t.task_id == cfg.primary else AUXILIARY) for t in sc.synth.tasks
        )
        sc = replace(sc, synth=replace(sc.synth, tasks=tasks))
    if cfg.freeze is not None:
        sc = replace(sc, freeze=cfg.freeze)
    unknown = set(sc.freeze) - {t.task_id for t in sc.synth.tasks}
    if unknown:
        raise ConfigError(f"cannot freeze unknown tasks {sorted(unknown)}")
    return sc


def csv_header(task_ids) -> list[str]:
    return ["schema", "seed", "epoch"] + [f"{t}.{c}" for t in task_ids for c in TASK_COLUMNS]


def train_seed(cfg: RunConfig, seed: int) -> tuple[list[dict], dict]:
    """Train one seed. Returns per-epoch rows and the final per-seed record."""
    sc = resolve_scenario(cfg, seed)
    try:
        strategy = strategy_registry(cfg.strategy, **cfg.strategy_params)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    train, test = generate(sc.synth)
    specs = sc.task_specs()
    net = init_net(sc.encoder_widths, specs, seed)
    tids = net.task_ids
    shuffle_rng = np.random.default_rng(task_seed(seed, "__shuffle__"))
    # log f(sigma) under the run's own map when the strategy has one
    f_cfg = strategy.config(cfg.lr_params, cfg.lr_eta) if hasattr(strategy, "config") else None

    def row(epoch, train_loss, reports):
        test_metrics = {r.task_id: r.value for r in eval_net(net, test)}
        out = {"schema": CSV_SCHEMA, "seed": seed, "epoch": epoch}
        last = reports[-1] if reports else None
        for t in tids:
            sig = sigma(net, t)
            vals = {
                "train_loss": train_loss[t],
                "test_metric": test_metrics[t],
                "sigma": sig,
                "f_sigma": f_weight(sig, f_cfg),
                "decoder_weight": last.decoder_weights[t] if last else 0.0,
                "encoder_weight": last.encoder_weights[t] if last else 0.0,
                "grad_norm": _mean(r.grad_norms[t] for r in reports),
                "grad_norm_normalized": _mean(r.normalized_grad_norms[t] for r in reports),
            }
            for c in TASK_COLUMNS:
                out[f"{t}.{c}"] = float(vals[c])
        return out

    rows = [row(0, eval_losses(net, train), [])]
    n = len(train)
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(n)
        reports = []
        for start in range(0, n, cfg.batch_size):
            batch = train.subset(order[start : start + cfg.batch_size])
            reports.append(strategy.step(net, batch, cfg.lr_params, cfg.lr_eta, freeze=sc.freeze))
        mean_losses = {t: _mean(r.losses[t] for r in reports) for t in tids}
        strategy.end_epoch(mean_losses)
        rows.append(row(epoch, mean_losses, reports))
        for key, value in rows[-1].items():
            if isinstance(value, float) and not math.isfinite(value):
                raise FloatingPointError(f"seed {seed} epoch {epoch}: {key} is not finite")
    return rows, seed_record(rows, tids, cfg.epochs)


def _mean(values) -> float:
    values = list(values)
    return float(sum(values) / len(values)) if values else 0.0


def last_quarter(rows: list[dict], epochs: int) -> list[dict]:
    if epochs == 0:
        return rows[-1:]
    first = epochs - max(1, epochs // 4) + 1
    return [r for r in rows if r["epoch"] >= first]


def seed_record(rows: list[dict], tids, epochs: int) -> dict:
    final = rows[-1]
    tail = last_quarter(rows, epochs)
    return {
        "metrics": {t: final[f"{t}.test_metric"] for t in tids},
        "sigma": {t: final[f"{t}.sigma"] for t in tids},
        "f_sigma_last_quarter": {t: _mean(r[f"{t}.f_sigma"] for r in tail) for t in tids},
        "encoder_weight_last_quarter": {t: _mean(r[f"{t}.encoder_weight"] for r in tail) for t in tids},
    }


def rows_to_csv(rows: list[dict], tids) -> str:
    buf = io.StringIO()
    header = csv_header(tids)
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for r in rows:
        writer.writerow([r[h] if isinstance(r[h], str) else repr(r[h]) for h in header])
    return buf.getvalue()


def read_run_csv(path) -> list[dict]:
    with Path(path).open(encoding="utf-8", newline="") as fh:
        rows = []
        for r in csv.DictReader(fh):
            rows.append({k: (v if k == "schema" else (int(v) if k in ("seed", "epoch") else float(v))) for k, v in r.items()})
    return rows


def summarize(cfg: RunConfig, per_seed: dict[int, dict], tids, directions) -> dict:
    means, stds = {}, {}
    for t in tids:
        vals = [per_seed[s]["metrics"][t] for s in cfg.seeds]
        means[t] = statistics.fmean(vals)
        stds[t] = statistics.stdev(vals) if len(vals) > 1 else 0.0
    return {
        "schema": SUMMARY_SCHEMA,
        "label": cfg.name,
        "config": cfg.to_dict(),
        "directions": directions,
        "per_seed": {str(s): per_seed[s] for s in cfg.seeds},
        "mean": means,
        "std": stds,
    }


@dataclass
class RunResult:
    summary: dict
    directory: Path
    csv_paths: list[Path]


def run(cfg: RunConfig) -> RunResult:
    """Train every seed, write ``<out>/<label>/seed<k>.csv`` and ``summary.json``."""
    out_dir = output_root(cfg) / cfg.name
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out_dir}: {exc}") from exc
    per_seed, paths = {}, []
    tids = directions = None
    for seed in cfg.seeds:
        log.info("run %s seed %d", cfg.name, seed)
        rows, record = train_seed(cfg, seed)
        sc = resolve_scenario(cfg, seed)
        tids = [t.task_id for t in sc.synth.tasks]
        directions = {s.task_id: s.metric_direction for s in sc.task_specs()}
        path = out_dir / f"seed{seed}.csv"
        path.write_text(rows_to_csv(rows, tids), encoding="utf-8")
        paths.append(path)
        per_seed[seed] = record
    summary = summarize(cfg, per_seed, tids, directions)
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    return RunResult(summary, out_dir, paths)


# -- comparison tables -------------------------------------------------------------


def _scenario_key(cfg: RunConfig):
    return json.dumps(cfg.scenario, sort_keys=True), cfg.seeds, cfg.primary


def single_task_configs(cfg: RunConfig) -> list[RunConfig]:
    """One single-task run per task: that task is primary, every other weight is 0."""
    sc = resolve_scenario(cfg, cfg.seeds[0])
    return [
        replace(
            cfg,
            strategy="fixed",
            strategy_params={"aux_weight": 0.0},
            label=f"single_{t.task_id}",
            primary=t.task_id,
            freeze=(),
        )
        for t in sc.synth.tasks
    ]


def compare(cfgs: list[RunConfig]) -> list[dict]:
    """Run every config plus single-task references; write compare.csv/.txt.

    Returns the table rows (``label``, per-task mean metrics, ``delta_mtl``).
    """
    if not cfgs:
        raise ConfigError("nothing to compare")
    key = _scenario_key(cfgs[0])
    if any(_scenario_key(c) != key for c in cfgs[1:]):
        raise ConfigError("all compared configs must share scenario, seeds and primary task")

    singles = {}
    for sc_cfg in single_task_configs(cfgs[0]):
        res = run(sc_cfg)
        singles[sc_cfg.primary] = res.summary
    tids = list(singles)
    directions = next(iter(singles.values()))["directions"]
    reference = [MetricRecord(t, singles[t]["mean"][t], directions[t]) for t in tids]

    table = [{"label": "single", **{t: r.value for t, r in zip(tids, reference)}, "delta_mtl": 0.0}]
    for cfg in cfgs:
        res = run(cfg)
        multi = [MetricRecord(t, res.summary["mean"][t], directions[t]) for t in tids]
        table.append({"label": cfg.name, **{t: m.value for t, m in zip(tids, multi)}, "delta_mtl": delta_mtl(multi, reference)})

    best = {}
    for col in tids + ["delta_mtl"]:
        higher = col == "delta_mtl" or directions[col] == "higher_better"
        vals = [r[col] for r in table[1:]] or [table[0][col]]
        best[col] = max(vals) if higher else min(vals)

    out = output_root(cfgs[0])
    out.mkdir(parents=True, exist_ok=True)
    (out / "compare.csv").write_text(_table_csv(table, tids, best), encoding="utf-8")
    (out / "compare.txt").write_text(format_table(table, tids, best), encoding="utf-8")
    return table


def _table_csv(table, tids, best) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = tids + ["delta_mtl"]
    w.writerow(["label", *cols, "best"])
    for r in table:
        flags = [c for c in cols if r["label"] != "single" and r[c] == best[c]]
        w.writerow([r["label"], *(repr(float(r[c])) for c in cols), ";".join(flags)])
    return buf.getvalue()


def format_table(table, tids, best) -> str:
    """Aligned text; the best multi-task value per column is starred."""
    cols = tids + ["delta_mtl"]
    cells = [["label", *cols]]
    for r in table:
        line = [r["label"]]
        for c in cols:
            txt = f"{r[c]:+.2f}%" if c == "delta_mtl" else f"{r[c]:.4f}"
            if r["label"] != "single" and r[c] == best[c]:
                txt += "*"
            line.append(txt)
        cells.append(line)
    widths = [max(len(row[i]) for row in cells) for i in range(len(cells[0]))]
    lines = ["  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths))) for row in cells]
    return "\n".join(lines) + "\n"
