"""Command-line entry points: run one experiment, compare strategies, or dump
the dynamics trace / data partition for a config."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .data import write_partition_csv
from .harness import (
    Strategy,
    build_datasets,
    compare,
    comparison_csv,
    init_state,
    read_config,
    run_experiment,
    write_config,
    write_csv,
)
from .sysmodel import gen_trace, make_fleet, write_trace_csv
from . import data as datasets


def _cmd_run(args: argparse.Namespace) -> int:
    config = read_config(args.config)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    log = run_experiment(config)
    write_csv(log, out_dir / "metrics.csv")
    write_config(config, out_dir / "config.ini")
    last = log.rows[-1]
    print(
        f"{config.strategy.value}: {len(log.rows)} rounds, "
        f"simulated {last.cum_time_s:.3f} s, final accuracy {last.test_acc:.4f}"
    )
    return 0


def _cmd_compare(args: argparse.Namespace) -> int:
    configs = [read_config(path) for path in args.configs]
    reference = Strategy(args.reference)
    report = compare(configs, reference)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / "compare.csv"
    out_path.write_text(comparison_csv(report, reference))
    for entry in report:
        if entry["reached"]:
            speedup = f"{entry['speedup']:.2f}x" if entry["speedup"] is not None else "-"
            print(
                f"{entry['strategy']}: reached {entry['target_accuracy']:.2%} in "
                f"{entry['time_to_target_s']:.3f} s ({speedup} vs {reference.value})"
            )
        else:
            print(f"{entry['strategy']}: target not reached")
    return 0


def _cmd_trace(args: argparse.Namespace) -> int:
    config = read_config(args.config)
    fleet = make_fleet(config.fleet)
    trace = gen_trace(fleet, config.rounds, config.seeds.trace, config.dynamics)
    write_trace_csv(trace, args.out)
    print(f"wrote {trace.rounds} rounds x {trace.clients} clients to {args.out}")
    return 0


def _cmd_partition(args: argparse.Namespace) -> int:
    config = read_config(args.config)
    train, _ = build_datasets(config)
    partition = datasets.partition_noniid(
        train, config.clients, config.classes_per_client, config.seeds.partition
    )
    write_partition_csv(partition, args.out)
    print(f"wrote partition of {train.size} examples over {partition.clients} clients to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="subnetfl",
        description="Simulate federated training over heterogeneous devices with adaptive subnetworks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one experiment and write metrics.csv")
    run_p.add_argument("--config", required=True, help="experiment config file")
    run_p.add_argument("--out", required=True, help="output directory")
    run_p.set_defaults(func=_cmd_run)

    cmp_p = sub.add_parser("compare", help="run several configs and report speedups")
    cmp_p.add_argument("--configs", required=True, nargs="+", help="one config file per strategy")
    cmp_p.add_argument("--reference", required=True, help="strategy speedups are measured against")
    cmp_p.add_argument("--out", required=True, help="output directory")
    cmp_p.set_defaults(func=_cmd_compare)

    trace_p = sub.add_parser("trace", help="dump the dynamics trace as CSV")
    trace_p.add_argument("--config", required=True)
    trace_p.add_argument("--out", required=True, help="output CSV path")
    trace_p.set_defaults(func=_cmd_trace)

    part_p = sub.add_parser("partition", help="dump the client data partition as CSV")
    part_p.add_argument("--config", required=True)
    part_p.add_argument("--out", required=True, help="output CSV path")
    part_p.set_defaults(func=_cmd_partition)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # one-line reason, nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
