"""Command-line front end.

Three subcommands:

- ``run``: execute every experiment a config file expands to, one run per
  seed, and write metrics CSVs plus a manifest under the output root.
- ``compare``: tabulate final accuracy, resource spend, wastage, and time
  to a target accuracy across previously exported metrics files.
- ``replicate``: run a named scenario and report its band verdicts.

Exit codes: 0 on success, 1 when a run or a scenario band fails, 2 for
usage and config errors.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .config import config_hash, load_config, with_seed
from .engine import dataset_for, run_experiment
from .metrics import export_metrics, import_metrics
from .scenarios import SCENARIO_NAMES, run_scenario

_UNREACHED = "\u2014"


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _fail(message: str) -> None:
    print(f"error: {message}", file=sys.stderr)


def cmd_run(args: argparse.Namespace) -> int:
    try:
        configs = load_config(args.config, args.override or [])
    except (FileNotFoundError, ValueError) as exc:
        _fail(str(exc))
        return 2
    if args.seeds < 1:
        _fail("--seeds must be >= 1")
        return 2
    out_root = Path(args.out)
    try:
        for cfg in configs:
            seeds = [cfg.seed + i for i in range(args.seeds)]
            exp_dir = out_root / cfg.name
            started = _now()
            dataset = dataset_for(cfg)
            outputs = []
            for seed in seeds:
                log = run_experiment(with_seed(cfg, seed), dataset)
                seed_dir = exp_dir / str(seed)
                seed_dir.mkdir(parents=True, exist_ok=True)
                csv_path = seed_dir / f"{cfg.name}.{seed}.csv"
                export_metrics(log, csv_path)
                outputs.append(str(csv_path.relative_to(exp_dir)))
                print(
                    f"{cfg.name} seed {seed}: accuracy"
                    f" {log.final_accuracy():.4f} -> {csv_path}"
                )
            manifest = {
                "experiment": cfg.name,
                "config_hash": config_hash(cfg),
                "seeds": seeds,
                "outputs": outputs,
                "started_at": started,
                "finished_at": _now(),
                "version": __version__,
            }
            manifest_path = exp_dir / "manifest.json"
            manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
            print(f"{cfg.name}: manifest -> {manifest_path}")
    except Exception as exc:
        _fail(str(exc))
        return 1
    return 0


def _compare_row(path: str, target: float) -> tuple[str, float, float, float, float]:
    log = import_metrics(path)
    last = log.rows[-1]
    hit = log.time_to_accuracy(target)
    tta = hit[0] if hit is not None else math.inf
    return (
        path,
        log.final_accuracy(),
        last.cumulative_resource_s,
        last.cumulative_wastage_s,
        tta,
    )


def cmd_compare(args: argparse.Namespace) -> int:
    if len(args.logs) < 2:
        _fail("compare needs at least two metrics files")
        return 2
    try:
        rows = [_compare_row(path, args.target) for path in args.logs]
    except (FileNotFoundError, ValueError) as exc:
        _fail(str(exc))
        return 2
    name_width = max(len(r[0]) for r in rows)
    tta_head = f"to_{args.target:g}_s"
    print(
        f"{'log':<{name_width}}  {'accuracy':>8}  {'resource_s':>12}"
        f"  {'wastage_s':>12}  {tta_head:>10}"
    )
    base = rows[0]
    for i, (name, acc, resource, wastage, tta) in enumerate(rows):
        tta_text = f"{tta:.1f}" if math.isfinite(tta) else _UNREACHED
        line = (
            f"{name:<{name_width}}  {acc:>8.4f}  {resource:>12.1f}"
            f"  {wastage:>12.1f}  {tta_text:>10}"
        )
        if i == 0:
            line += "  (baseline)"
        else:
            ratio = resource / base[2] if base[2] > 0 else math.inf
            ratio_text = f"x{ratio:.2f}" if math.isfinite(ratio) else _UNREACHED
            if math.isfinite(tta) and math.isfinite(base[4]) and base[4] > 0:
                tta_ratio = f"x{tta / base[4]:.2f}"
            else:
                tta_ratio = _UNREACHED
            line += f"  resource {ratio_text}  time {tta_ratio}"
        print(line)
    return 0


def cmd_replicate(args: argparse.Namespace) -> int:
    if args.scenario not in SCENARIO_NAMES:
        _fail(
            f"unknown scenario {args.scenario!r};"
            f" valid: {', '.join(SCENARIO_NAMES)}"
        )
        return 2
    if args.seeds < 1:
        _fail("--seeds must be >= 1")
        return 2
    try:
        report = run_scenario(args.scenario, tuple(range(args.seeds)))
    except Exception as exc:
        _fail(str(exc))
        return 1
    print(f"{report.name}: {'PASS' if report.passed else 'FAIL'}")
    for line in report.lines:
        print(line)
    return 0 if report.passed else 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedsim",
        description="Discrete-event federated learning simulator.",
    )
    parser.add_argument(
        "--version", action="version", version=f"%(prog)s {__version__}"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run experiments from a config file")
    run.add_argument("--config", required=True, help="INI experiment file")
    run.add_argument(
        "--override",
        action="append",
        metavar="KEY=VALUE",
        help="override a config field; repeatable",
    )
    run.add_argument("--out", default="results", help="output root directory")
    run.add_argument(
        "--seeds",
        type=int,
        default=1,
        help="number of consecutive seeds starting at the configured one",
    )
    run.set_defaults(func=cmd_run)

    compare = sub.add_parser("compare", help="tabulate exported metrics files")
    compare.add_argument("logs", nargs="+", help="metrics CSV paths")
    compare.add_argument(
        "--target",
        type=float,
        default=0.9,
        help="accuracy for the time-to-target column",
    )
    compare.set_defaults(func=cmd_compare)

    replicate = sub.add_parser("replicate", help="run a named scenario")
    replicate.add_argument(
        "scenario", help=f"one of: {', '.join(SCENARIO_NAMES)}"
    )
    replicate.add_argument(
        "--seeds", type=int, default=3, help="number of seeds, starting at 0"
    )
    replicate.set_defaults(func=cmd_replicate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
