"""Command line entry point: ``ial {run,compare,dmtl,gradcheck,scenarios}``.

Exit codes: 0 success, 1 configuration or usage error, 2 failed check.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from .gradcheck import TOLERANCE, run_gradcheck
from .harness import ConfigError, RunConfig, compare, run
from .metrics import MetricRecord, delta_mtl
from .synth import SCENARIOS, scenario

EXIT_OK, EXIT_CONFIG, EXIT_CHECK = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def read_metric_csv(path) -> list[MetricRecord]:
    """Rows of ``value,direction`` with an optional leading ``task`` column."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"metric file not found: {p}")
    with p.open(encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        fields = set(reader.fieldnames or ())
        if not {"value", "direction"} <= fields:
            raise ConfigError(f"{p}: expected columns 'value' and 'direction', got {sorted(fields)}")
        records = []
        for i, row in enumerate(reader):
            try:
                records.append(MetricRecord(row.get("task") or f"task{i}", float(row["value"]), row["direction"].strip()))
            except ValueError as exc:
                raise ConfigError(f"{p}, row {i + 1}: {exc}") from exc
    return records


def _cmd_run(args) -> int:
    cfg = RunConfig.load(args.config)
    result = run(cfg)
    print(f"wrote {result.directory}")
    for tid, mean in result.summary["mean"].items():
        print(f"  {tid:16s} mean {mean:.6f}  std {result.summary['std'][tid]:.6f}")
    return EXIT_OK


def _cmd_compare(args) -> int:
    cfgs = [RunConfig.load(p) for p in args.configs]
    table = compare(cfgs)
    for row in table:
        print(f"{row['label']:24s} dMTL {row['delta_mtl']:+.2f}%")
    return EXIT_OK


def _cmd_dmtl(args) -> int:
    multi, single = read_metric_csv(args.multi), read_metric_csv(args.single)
    if len(multi) != len(single):
        raise ConfigError("multi-task and single-task files list different numbers of tasks")
    try:
        score = delta_mtl(multi, single)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    print(f"{score:.2f}")
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    errors = run_gradcheck(n_cases=args.cases, seed=args.seed)
    worst = max(errors.values())
    for name, err in errors.items():
        print(f"{name:12s} max rel err {err:.3e}  {'ok' if err < TOLERANCE else 'FAIL'}")
    print(f"max relative error {worst:.3e} (tolerance {TOLERANCE:g})")
    return EXIT_OK if worst < TOLERANCE else EXIT_CHECK


def _cmd_scenarios(args) -> int:
    for name in SCENARIOS:
        sc = scenario(name)
        tasks = ", ".join(f"{t.task_id}({t.kind}, rho={t.relatedness}, c={t.corrupt_fraction})" for t in sc.synth.tasks)
        frozen = f" frozen={list(sc.freeze)}" if sc.freeze else ""
        print(f"{name}: {tasks}{frozen}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ial", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="train every seed of one config")
    p.add_argument("--config", required=True)
    p.set_defaults(fn=_cmd_run)

    p = sub.add_parser("compare", help="run configs side by side with single-task references")
    p.add_argument("--configs", nargs="+", required=True)
    p.set_defaults(fn=_cmd_compare)

    p = sub.add_parser("dmtl", help="relative improvement of multi-task over single-task metrics")
    p.add_argument("--multi", required=True)
    p.add_argument("--single", required=True)
    p.set_defaults(fn=_cmd_dmtl)

    p = sub.add_parser("gradcheck", help="finite-difference check of every operation")
    p.add_argument("--cases", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_gradcheck)

    p = sub.add_parser("scenarios", help="list built-in benchmark scenarios")
    p.set_defaults(fn=_cmd_scenarios)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"ial: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
