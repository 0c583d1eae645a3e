"""Command-line entry point.

Exit codes: 0 on success, 2 on configuration or input errors, 3 when a run
fails after it has started.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .environments import load_classification_csv
from .exceptions import ConfigError
from .harness.charts import emit_charts
from .harness.experiment import load_config, read_summary, run_experiment
from .harness.metrics import pairwise_compare
from .harness.trace import RegretTrace

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

logger = logging.getLogger("balanced_bandits")


def _seeds(text: str) -> list[int]:
    """``"20"`` means seeds 0..19; ``"3,5,8"`` lists seeds explicitly; ``"10-19"`` is a range."""
    try:
        if "," in text:
            seeds = [int(s) for s in text.split(",") if s.strip()]
        elif "-" in text:
            lo, hi = (int(s) for s in text.split("-", 1))
            seeds = list(range(lo, hi + 1))
        else:
            seeds = list(range(int(text)))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"invalid seed specification {text!r}") from exc
    if not seeds or min(seeds) < 0:
        raise argparse.ArgumentTypeError(f"invalid seed specification {text!r}")
    return seeds


def _cmd_run(args) -> int:
    config = load_config(args.config)
    if args.seeds is not None:
        config.seeds = args.seeds
    if args.horizon is not None:
        if args.horizon < 0:
            raise ConfigError("--horizon must be non-negative")
        config.horizon = args.horizon
    if args.out is not None:
        config.out = Path(args.out)
    if args.jobs is not None:
        config.jobs = args.jobs
    summary = run_experiment(config)
    for name, entry in summary["policies"].items():
        print(f"{name}: mean regret {entry['mean_final_regret']:.3f} "
              f"(se {entry['se_final_regret']:.3f}), assignment rate "
              f"{entry['optimal_assignment_rate']:.2f}, grid point {entry['selected_grid_point']}")
    print(f"wrote {config.out}")
    return EXIT_OK


def _cmd_compare(args) -> int:
    summaries = [read_summary(p) for p in args.summaries]
    report = pairwise_compare(summaries)
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    for exp, rows in report.items():
        print(exp)
        for row in rows:
            print(f"  {row['policy']} vs {row['opponent']}: {row['outcome']} "
                  f"({row['mean']:.4f} vs {row['opponent_mean']:.4f}, {row['p_bucket']})")
    return EXIT_OK


def _cmd_chart(args) -> int:
    trace_dir = Path(args.trace_dir)
    if not trace_dir.is_dir():
        raise ConfigError(f"{trace_dir} is not a directory")
    traces = [RegretTrace.read_csv(p) for p in sorted(trace_dir.glob("trace_*.csv"))]
    svg, table = emit_charts(traces, args.out or trace_dir)
    print(f"wrote {svg} and {table} from {len(traces)} traces")
    return EXIT_OK


def _cmd_validate(args) -> int:
    X, labels = load_classification_csv(args.csv, args.label)
    classes, counts = np.unique(labels, return_counts=True)
    print(f"{args.csv}: {X.shape[0]} rows, {X.shape[1]} features, {len(classes)} classes")
    for c, n in zip(classes, counts):
        print(f"  {c}: {n}")
    if len(classes) < 2:
        raise ConfigError("a bandit dataset needs at least two classes")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="balanced-bandits", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment from a TOML config")
    run.add_argument("config")
    run.add_argument("--seeds", type=_seeds, help="count, range a-b or comma list")
    run.add_argument("--horizon", type=int)
    run.add_argument("--out")
    run.add_argument("--jobs", type=int)
    run.set_defaults(func=_cmd_run)

    cmp_ = sub.add_parser("compare", help="pairwise policy comparison across summaries")
    cmp_.add_argument("summaries", nargs="+")
    cmp_.add_argument("--out", help="write the report as JSON")
    cmp_.set_defaults(func=_cmd_compare)

    chart = sub.add_parser("chart", help="cumulative-regret chart from a trace directory")
    chart.add_argument("trace_dir")
    chart.add_argument("--out", help="output directory (default: the trace directory)")
    chart.set_defaults(func=_cmd_chart)

    data = sub.add_parser("datasets", help="dataset utilities")
    data_sub = data.add_subparsers(dest="datasets_command", required=True)
    validate = data_sub.add_parser("validate", help="check that a CSV loads as a classification dataset")
    validate.add_argument("csv")
    validate.add_argument("--label", default="label")
    validate.set_defaults(func=_cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - any failure after validation is a runtime failure
        logger.debug("run failed", exc_info=True)
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
