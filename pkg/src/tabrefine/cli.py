"""Command-line interface.

Subcommands: mask-gen, impute, benchmark, validate, report. A plain-text
key-value config file (--config) supplies defaults; explicit flags win.
Exit codes: 0 success, 2 validation failure, 1 error.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from .copytask import CopyTaskConfig
from .diffusion import DiffusionConfig, NoiseSchedule
from .gbt import GbtParams
from .ingest import load_csv, read_schema, write_csv
from .masks import MaskSpec, generate, mask_filename, write_mask_csv
from .metrics import aggregate, read_records_csv
from .pipeline import RunConfig, complete_table, run_pipeline
from .sweep import SweepConfig
from .synthetic import make_synthetic_mixed
from .util import read_kv
from .validate import run_validation


def _add_data_args(p, required=True):
    p.add_argument("--data", required=required, help="dataset CSV path")
    p.add_argument("--schema", default=None, help="optional schema file")


def _add_train_args(p):
    p.add_argument("--train-steps", type=int, default=3000)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--n-trajectories", type=int, default=10)
    p.add_argument("--sampling-steps", type=int, default=50)
    p.add_argument("--estimators", type=int, default=100,
                   help="boosted trees per column model")
    p.add_argument("--skip-diffusion", action="store_true")
    p.add_argument("--skip-polish", action="store_true")


def _parse_seeds(text: str) -> tuple:
    if ".." in text:
        a, b = text.split("..")
        return tuple(range(int(a), int(b) + 1))
    return tuple(int(s) for s in text.split(","))


def _diffusion_cfg(args) -> DiffusionConfig:
    return DiffusionConfig(
        schedule=NoiseSchedule(steps=args.sampling_steps),
        n_trajectories=args.n_trajectories, train_steps=args.train_steps,
        batch_size=args.batch_size, lr=args.lr)


def _sweep_cfg(args) -> SweepConfig:
    params = GbtParams(n_estimators=args.estimators)
    return SweepConfig(regressor_params=params, classifier_params=params)


def _load_data(args):
    schema = read_schema(args.schema) if args.schema else None
    return load_csv(args.data, schema)


def cmd_mask_gen(args) -> int:
    table = _load_data(args)
    os.makedirs(args.out, exist_ok=True)
    name = os.path.splitext(os.path.basename(args.data))[0]
    for seed in _parse_seeds(args.seeds):
        spec = MaskSpec(args.mechanism, args.rate, seed,
                        args.mar_observed_fraction)
        mask = generate(table, spec)
        path = os.path.join(args.out, mask_filename(name, args.mechanism, seed))
        write_mask_csv(mask, path)
        print(f"{path}  realized_rate={mask.missing_rate:.4f}")
    return 0


def cmd_impute(args) -> int:
    table = _load_data(args)
    completed = complete_table(
        table, sweep_cfg=_sweep_cfg(args), diffusion_cfg=_diffusion_cfg(args),
        skip_diffusion=args.skip_diffusion, skip_polish=args.skip_polish,
        master_seed=args.seed)
    write_csv(completed, args.out)
    print(f"wrote completed table to {args.out}")
    return 0


def cmd_benchmark(args) -> int:
    if args.synthetic:
        table = make_synthetic_mixed(args.rows, seed=args.synthetic_seed)
        name = "synthetic"
    else:
        if not args.data:
            print("error: provide --data or --synthetic", file=sys.stderr)
            return 1
        table = _load_data(args)
        name = os.path.splitext(os.path.basename(args.data))[0]
    cfg = RunConfig(
        dataset=args.data, schema=args.schema, mechanism=args.mechanism,
        rate=args.rate, seeds=_parse_seeds(args.seeds),
        split_fraction=args.split_fraction,
        mar_observed_fraction=args.mar_observed_fraction,
        sweep=_sweep_cfg(args), diffusion=_diffusion_cfg(args),
        skip_diffusion=args.skip_diffusion, skip_polish=args.skip_polish,
        out_dir=args.out, master_seed=args.master_seed, dataset_name=name)
    result = run_pipeline(cfg, table=table)
    for seed, msg, _ in result.failures:
        print(f"seed {seed} FAILED: {msg}", file=sys.stderr)
    if result.records:
        print(aggregate(result.records).to_markdown())
    print(f"outputs under {args.out}")
    return 1 if result.failures and not result.runs else 0


def cmd_validate(args) -> int:
    copy_cfg = CopyTaskConfig()
    if args.quick_copy:
        copy_cfg = replace(copy_cfg, train_steps=1000, eval_sequences=128)
    report = run_validation(include_copy_task=not args.skip_copy_task,
                            copy_cfg=copy_cfg)
    failed = False
    for name, ok, detail in report:
        print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        failed |= not ok
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            for name, ok, detail in report:
                f.write(f"{name} = {'pass' if ok else 'fail'} ({detail})\n")
    return 2 if failed else 0


def cmd_report(args) -> int:
    records = []
    for path in args.records:
        records.extend(read_records_csv(path))
    if not records:
        print("no records found", file=sys.stderr)
        return 1
    table = aggregate(records)
    print(table.to_markdown())
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        table.to_csv(os.path.join(args.out, "aggregate.csv"))
        with open(os.path.join(args.out, "report.md"), "w",
                  encoding="utf-8") as f:
            f.write(table.to_markdown() + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tabrefine",
        description="Mixed-type tabular imputation: predictive warm-up, "
                    "masked diffusion refinement, polishing, benchmarking.")
    parser.add_argument("--config", default=None,
                        help="key-value config file supplying flag defaults")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mask-gen", help="generate missingness masks")
    _add_data_args(p)
    p.add_argument("--mechanism", choices=["mcar", "mar", "mnar"], default="mcar")
    p.add_argument("--rate", type=float, default=0.3)
    p.add_argument("--mar-observed-fraction", type=float, default=0.3)
    p.add_argument("--seeds", default="0..9", help="e.g. 0..9 or 0,3,7")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mask_gen)

    p = sub.add_parser("impute", help="complete a CSV with missing cells")
    _add_data_args(p)
    _add_train_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_impute)

    p = sub.add_parser("benchmark", help="seeded MCAR/MAR/MNAR benchmark")
    _add_data_args(p, required=False)
    p.add_argument("--synthetic", action="store_true",
                   help="use the built-in synthetic mixed dataset")
    p.add_argument("--rows", type=int, default=5000)
    p.add_argument("--synthetic-seed", type=int, default=0)
    p.add_argument("--mechanism", choices=["mcar", "mar", "mnar"], default="mcar")
    p.add_argument("--rate", type=float, default=0.3)
    p.add_argument("--mar-observed-fraction", type=float, default=0.3)
    p.add_argument("--seeds", default="0..9")
    p.add_argument("--split-fraction", type=float, default=0.7)
    p.add_argument("--master-seed", type=int, default=0)
    _add_train_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("validate", help="run self-checks")
    p.add_argument("--skip-copy-task", action="store_true")
    p.add_argument("--quick-copy", action="store_true",
                   help="shortened copy-task budget (diagnostic only)")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("report", help="aggregate metric record CSVs")
    p.add_argument("--records", nargs="+", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    if "--config" in argv:
        cfg_path = argv[argv.index("--config") + 1]
        kv = {k.replace("-", "_"): v for k, v in read_kv(cfg_path).items()}
        for action in parser._subparsers._group_actions[0].choices.values():
            defaults = {}
            for a in action._actions:
                if a.dest in kv:
                    val = kv[a.dest]
                    if a.type is not None:
                        val = a.type(val)
                    elif isinstance(a.const, bool) or isinstance(a.default, bool):
                        val = val.lower() in ("1", "true", "yes")
                    defaults[a.dest] = val
            action.set_defaults(**defaults)
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as e:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
