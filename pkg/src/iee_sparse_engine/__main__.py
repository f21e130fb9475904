"""
CLI entry point for the IEE sparse-training engine.

Enables: python -m iee_sparse_engine
"""

import argparse
import json
import logging
import sys
from typing import Any, Dict, List, Optional

import yaml


def _load(args: argparse.Namespace):
    from iee_sparse_engine.harness.config import load_config, override

    config = load_config(args.config)
    updates: Dict[str, Any] = {}
    for item in getattr(args, "set", None) or []:
        key, sep, raw = item.partition("=")
        if not sep:
            from iee_sparse_engine.errors import ConfigError

            raise ConfigError(f"--set expects key=value, got '{item}'")
        updates[key.strip()] = yaml.safe_load(raw)
    if getattr(args, "seed", None) is not None:
        updates["seeds"] = [args.seed]
    return override(config, updates) if updates else config


def _initial_state(config):
    """Model and initial partition of a config without loading its data."""
    from iee_sparse_engine.nn.model import build_model
    from iee_sparse_engine.reproducibility.state_manager import seed_stream
    from iee_sparse_engine.sparsity.distributions import init_partition

    seed = config.seeds[0]
    model = build_model(config.model, seed_stream(seed, "init", 0))
    return model, init_partition(model, config.plan, seed_stream(seed, "init", 1))


def cmd_train(args: argparse.Namespace) -> int:
    """Train every seed of a config, one run directory per seed."""
    from iee_sparse_engine.core.engine import IeeEngine, run_dir_for

    config = _load(args)
    results = []
    outcomes = []
    for seed in config.seeds:
        engine = IeeEngine(
            config,
            seed=seed,
            run_dir=run_dir_for(config, seed),
            init_from=args.init_from,
            init_masks=args.init_masks,
            resume_from="latest" if args.resume else None,
        )
        result = engine.execute()
        outcomes.append(result)
        results.append({
            "seed": seed,
            "run_dir": engine.get_reproducibility_info()["run_dir"],
            "audit": engine.get_audit_trail(),
            **result.metrics(),
        })
    print(json.dumps({"name": config.name, "strategy": config.strategy.value, "runs": results}, indent=2, default=str))
    for result in outcomes:
        result.raise_if_diverged()
    print("\n[OK] Training finished.", file=sys.stderr)
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    """Run an ablation grid over a base config."""
    from iee_sparse_engine.harness.ablation import ablate, load_grid

    config = _load(args)
    grid = load_grid(args.grid)
    results = ablate(config, grid, out_dir=args.output, workers=args.workers)
    print(json.dumps([r.model_dump(mode="json") for r in results], indent=2, default=str))
    failed = sum(r.status == "error" for r in results)
    if failed:
        print(f"\n[FAIL] {failed} of {len(results)} runs raised.", file=sys.stderr)
        return 1
    return 0


def cmd_flops(args: argparse.Namespace) -> int:
    """Print closed-form training costs at the config's sparsity."""
    from iee_sparse_engine.ledger.flops_ledger import closed_form_table, dense_equivalent, forward_flops

    config = _load(args)
    model, partition = _initial_state(config)
    zeta_d = forward_flops(model)
    zeta_p = forward_flops(model, partition.forward_masks(model))
    sched = config.schedule
    table = closed_form_table(
        zeta_p, zeta_d,
        H=sched.H, J=sched.J, Q=sched.Q, stop_fraction=sched.stop_fraction,
        stop_epoch=sched.structured_stop_epoch * sched.epochs, total_epochs=sched.epochs,
        delta_t=config.baseline_interval(),
    )
    print(json.dumps({
        "zeta_d": zeta_d,
        "zeta_p": zeta_p,
        "per_sample": table,
        "dense_fraction": {k: dense_equivalent(v, zeta_d) for k, v in table.items()},
    }, indent=2))
    return 0


def cmd_prune_plan(args: argparse.Namespace) -> int:
    """Knapsack channel plan of a config's initial model at a latency budget."""
    from iee_sparse_engine.importance.criteria import magnitude_score
    from iee_sparse_engine.nn.model import build_model
    from iee_sparse_engine.reproducibility.state_manager import seed_stream
    from iee_sparse_engine.sparsity.distributions import init_channel_partition
    from iee_sparse_engine.structured.channel_selection import (
        channel_counts,
        check_table_matches,
        structured_grow,
        structured_prune,
    )
    from iee_sparse_engine.structured.latency_table import load_latency_table, synthetic_latency_table

    config = _load(args)
    model = build_model(config.model, seed_stream(config.seeds[0], "init", 0))
    if args.synthetic:
        channels = [g.channels for g in model.channel_groups()]
        synthetic_latency_table(channels, config.model.input_shape[0]).write_csv(args.table)
        print(f"[OK] Wrote synthetic latency table to {args.table}", file=sys.stderr)
    table = load_latency_table(args.table)
    check_table_matches(table, model)
    quantum = config.structured.quantum
    dense = init_channel_partition(model, 1.0, seed_stream(config.seeds[0], "init", 1))
    scores = magnitude_score(model, dense).values
    kept, _ = structured_prune(dense, scores, table, args.budget_ms, 0.0, quantum)
    kept, _ = structured_grow(kept, scores, table, args.budget_ms, args.budget_ms, quantum)
    counts = channel_counts(kept)
    print(json.dumps({
        "budget_ms": args.budget_ms,
        "dense_latency_ms": table.total_latency(channel_counts(dense)),
        "latency_ms": table.total_latency(counts),
        "layers": [
            {"weight": name, "kept": int(mask.active), "channels": int(mask.size),
             "indices": [int(i) for i in mask.bits.nonzero()[0]]}
            for name, mask in kept.masks.items()
        ],
    }, indent=2))
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    """IoU / survival series and summaries of event logs."""
    from iee_sparse_engine.metrics.report import build_report

    summaries = build_report(args.logs, args.output)
    print(json.dumps([s.model_dump(mode="json") for s in summaries], indent=2, default=str))
    broken = [s.log for s in summaries if not s.chain_valid]
    if broken:
        print(f"\n[FAIL] Event-log chain BROKEN: {', '.join(broken)}", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    """Build the CLI argument parser."""
    parser = argparse.ArgumentParser(
        prog="iee",
        description="IEE sparse training -- prune, reactivate and explore, grow.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="Log progress to stderr")
    subparsers = parser.add_subparsers(dest="command", help="Available commands")

    def with_config(sub: argparse.ArgumentParser):
        sub.add_argument("-c", "--config", required=True, help="Experiment YAML file")
        sub.add_argument(
            "--set", action="append", metavar="KEY=VALUE",
            help="Override a config key (dotted, e.g. schedule.H=100); repeatable",
        )

    # --- train ---
    train_parser = subparsers.add_parser("train", help="Train a config")
    with_config(train_parser)
    train_parser.add_argument("--seed", type=int, default=None, help="Run this seed only")
    train_parser.add_argument("--init-from", default=None, help="Warm-start checkpoint")
    train_parser.add_argument("--init-masks", action="store_true", help="Also load masks from --init-from")
    train_parser.add_argument("--resume", action="store_true", help="Continue from the newest checkpoint")

    # --- ablate ---
    ablate_parser = subparsers.add_parser("ablate", help="Run an ablation grid")
    with_config(ablate_parser)
    ablate_parser.add_argument("--grid", required=True, help="Grid YAML file")
    ablate_parser.add_argument("--workers", type=int, default=None, help="Parallel processes")
    ablate_parser.add_argument("-o", "--output", default=None, help="Output directory")

    # --- flops ---
    flops_parser = subparsers.add_parser("flops", help="Closed-form training cost table")
    with_config(flops_parser)

    # --- prune-plan ---
    plan_parser = subparsers.add_parser("prune-plan", help="Latency-constrained channel plan")
    with_config(plan_parser)
    plan_parser.add_argument("--table", required=True, help="Latency table CSV")
    plan_parser.add_argument("--budget-ms", type=float, required=True, help="Latency target in ms")
    plan_parser.add_argument("--synthetic", action="store_true", help="Write a synthetic table to --table first")

    # --- report ---
    report_parser = subparsers.add_parser("report", help="Summarize event logs")
    report_parser.add_argument("logs", nargs="+", help="Event-log files")
    report_parser.add_argument("-o", "--output", required=True, help="Output directory")

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point."""
    from iee_sparse_engine.errors import IeeError

    parser = build_parser()
    args = parser.parse_args(argv)

    if args.command is None:
        parser.print_help()
        return 0

    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )

    dispatch = {
        "train": cmd_train,
        "ablate": cmd_ablate,
        "flops": cmd_flops,
        "prune-plan": cmd_prune_plan,
        "report": cmd_report,
    }

    handler = dispatch.get(args.command)
    if handler is None:
        parser.print_help()
        return 1

    try:
        return handler(args)
    except IeeError as e:
        print(f"[FAIL] {type(e).__name__}: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
