"""Command-line entry point.

Subcommands:
  run       one sequential lifelong run from a config (or the default benchmark)
  sweep     memory-budget sweep for GEM over both selection policies
  baseline  fine-tuning baseline plus the multitask upper bound
  report    merge summary CSVs from several out-dirs into one table

Flags override config fields; --seed and --out-dir are required wherever
results are produced.
"""

from __future__ import annotations

import argparse
import json
import os
from dataclasses import replace

from .reporting import merge_summaries, write_report, write_rows, write_summaries
from .training import (
    RunConfig,
    default_config,
    relative_wer_reduction,
    run_memory_sweep,
    run_multitask,
    run_sequential,
)


def _load_config(args) -> RunConfig:
    if args.config:
        with open(args.config) as fh:
            config = RunConfig.from_dict(json.load(fh))
    else:
        config = default_config()
    config = replace(config, seed=args.seed)
    for name in ("method", "epochs_per_stage", "batch_size", "eval_every", "decode"):
        value = getattr(args, name, None)
        if value is not None:
            config = replace(config, **{name: value})
    if getattr(args, "policy", None) is not None:
        config = replace(config, method="gem", selection_policy=args.policy)
    if getattr(args, "budget_frac", None) is not None:
        config = replace(config, memory_budget_frac=args.budget_frac)
    return config


def _add_common(p: argparse.ArgumentParser, out_required: bool = True):
    p.add_argument("--config", help="JSON run config (defaults to the built-in benchmark)")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out-dir", required=out_required)
    p.add_argument("--method", choices=("finetune", "ewc", "online_ewc", "si", "kd", "gem"))
    p.add_argument("--policy", choices=("random", "min_perplexity", "median_length"))
    p.add_argument("--budget-frac", dest="budget_frac", type=float)
    p.add_argument("--epochs-per-stage", dest="epochs_per_stage", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--eval-every", dest="eval_every", type=int)
    p.add_argument("--decode", choices=("greedy", "beam"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lifelong-ctc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    _add_common(sub.add_parser("run", help="single sequential lifelong run"))

    sweep = sub.add_parser("sweep", help="memory-budget sweep (GEM)")
    _add_common(sweep)
    sweep.add_argument(
        "--budgets",
        default="0.01,0.05,0.15",
        help="comma-separated budget fractions of the mean task size",
    )

    _add_common(sub.add_parser("baseline", help="finetune baseline + multitask upper bound"))

    rep = sub.add_parser("report", help="merge summary CSVs")
    rep.add_argument("--inputs", nargs="+", required=True, help="summary.csv paths or out-dirs")
    rep.add_argument("--out", required=True, help="merged CSV path")

    dump = sub.add_parser("dump-config", help="print the default config as JSON")
    dump.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)

    if args.command == "dump-config":
        print(json.dumps(default_config(seed=args.seed).to_dict(), indent=2))
        return 0

    if args.command == "report":
        paths = []
        for inp in args.inputs:
            paths.append(os.path.join(inp, "summary.csv") if os.path.isdir(inp) else inp)
        write_rows(args.out, merge_summaries(paths))
        print(f"wrote {args.out}")
        return 0

    config = _load_config(args)
    os.makedirs(args.out_dir, exist_ok=True)
    with open(os.path.join(args.out_dir, "config.json"), "w") as fh:
        json.dump(config.to_dict(), fh, indent=2)

    if args.command == "run":
        report = run_sequential(config)
        write_report(args.out_dir, report)
        print(f"{config.method}: averaged WER {report.averaged_wer:.4f} -> {args.out_dir}")

    elif args.command == "sweep":
        budgets = [float(b) for b in args.budgets.split(",")]
        reports = run_memory_sweep(config, budgets)
        for r in reports:
            write_report(args.out_dir, r, prefix=f"b{r.budget_frac}_{r.policy}_")
        write_summaries(os.path.join(args.out_dir, "summary.csv"), reports)
        print(f"{len(reports)} sweep runs -> {args.out_dir}")

    elif args.command == "baseline":
        ft = run_sequential(replace(config, method="finetune", selection_policy=None))
        mt = run_multitask(config)
        mt.relative_reduction_vs_baseline = relative_wer_reduction(ft, mt)
        write_report(args.out_dir, ft, prefix="finetune_")
        write_report(args.out_dir, mt, prefix="multitask_")
        write_summaries(os.path.join(args.out_dir, "summary.csv"), [ft, mt])
        print(
            f"finetune {ft.averaged_wer:.4f} vs multitask {mt.averaged_wer:.4f} "
            f"(relative reduction {mt.relative_reduction_vs_baseline:.3f}) -> {args.out_dir}"
        )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
