"""Command-line experiment runner.

Verbs: run (one spec, optionally swept), suite <name> (a named ablation),
grid (hyperparameter grid search with validation-loss selection), eval
<checkpoint>, gen-data (write preset CSVs). Flags override values from an
optional flat JSON config file. Exit codes: 0 success, 1 invalid spec,
2 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from . import experiments
from .data import save_dataset
from .evaluation import evaluate, report_to_json
from .experiments import ExperimentSpec, build_splits, grid_select, suite_spec
from .network import load_checkpoint, predict_labels


class SpecError(ValueError):
    """Invalid command line or config contents."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); spec errors must exit 1
        raise SpecError(message)


def _add_shared_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat JSON config file mirroring the spec fields")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", dest="out_dir", help="output directory")
    p.add_argument("--jobs", type=int)
    p.add_argument("--dataset", help="preset name, blobs:<params>, or CSV path")
    p.add_argument("--n-c", dest="n_c", type=int)
    p.add_argument("--folds", type=int)
    p.add_argument("--regime", choices=("constraintmatch", "constrained",
                                        "naive_pl", "fully_constrained"))
    p.add_argument("--tau", type=float)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--mu", type=float)
    p.add_argument("--soft", dest="soft_pc", action="store_true", default=None)
    p.add_argument("--hard", dest="soft_pc", action="store_false", default=None)
    p.add_argument("--rho", type=float)
    p.add_argument("--flip-frac", dest="flip_frac", type=float)
    p.add_argument("--n-out", dest="n_out", type=int)
    p.add_argument("--steps", dest="T", type=int)
    p.add_argument("--eta", type=float)
    p.add_argument("--selection-mode", dest="selection_mode",
                   choices=("informativeness", "confidence"))
    p.add_argument("--eval-splits", dest="eval_splits",
                   help="comma-separated splits, e.g. test or train+test,test")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="constraintmatch",
                     description="semi-constrained clustering experiments")
    sub = parser.add_subparsers(dest="verb", required=True)

    run_p = sub.add_parser("run", help="run one experiment spec")
    _add_shared_flags(run_p)

    suite_p = sub.add_parser("suite", help="run a named ablation suite")
    suite_p.add_argument("name", choices=experiments.SUITE_NAMES)
    _add_shared_flags(suite_p)

    grid_p = sub.add_parser("grid", help="grid search with validation-loss selection")
    _add_shared_flags(grid_p)
    grid_p.add_argument("--include-shared", action="store_true",
                        help="also sweep learning rate and weight decay")

    eval_p = sub.add_parser("eval", help="evaluate a model checkpoint")
    eval_p.add_argument("checkpoint")
    _add_shared_flags(eval_p)
    eval_p.add_argument("--split", default="test")

    gen_p = sub.add_parser("gen-data", help="write a dataset's split CSVs")
    _add_shared_flags(gen_p)
    return parser


_SPEC_FIELDS = {f.name for f in dataclasses.fields(ExperimentSpec)}


def _spec_from_args(args: argparse.Namespace) -> ExperimentSpec:
    values: dict = {}
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                values.update(json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise SpecError(f"cannot read config {args.config}: {exc}") from exc
    for key, value in vars(args).items():
        if key in _SPEC_FIELDS and value is not None:
            values[key] = value
    if isinstance(values.get("eval_splits"), str):
        values["eval_splits"] = tuple(values["eval_splits"].split(","))
    unknown = set(values) - _SPEC_FIELDS
    if unknown:
        raise SpecError(f"unknown config keys: {sorted(unknown)}")
    try:
        return ExperimentSpec(**values)
    except (TypeError, ValueError) as exc:
        raise SpecError(str(exc)) from exc


def _cmd_run(args) -> int:
    spec = _spec_from_args(args)
    _, summaries = experiments.run(spec)
    print(f"wrote {spec.out_dir}/results.csv ({len(summaries)} summary rows)")
    return 0


def _cmd_suite(args) -> int:
    overrides = {}
    for key in ("seed", "out_dir", "folds", "T", "eta", "jobs", "dataset", "n_c"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    seed = overrides.pop("seed", 0)
    out_dir = overrides.pop("out_dir", None)
    spec, _ = experiments.ablation_suite(args.name, seed=seed, out_dir=out_dir,
                                         spec_overrides=overrides or None)
    print(f"suite {args.name} complete: {spec.out_dir}/plotdata.csv")
    return 0


def _cmd_grid(args) -> int:
    spec = _spec_from_args(args)
    if not spec.sweep and spec.cells is None:
        sweep = {"lam": [1.0, 0.5, 0.1, 0.05]}
        if spec.regime == "naive_pl":
            sweep["tau"] = [0.7, 0.8, 0.9, 0.95, 0.99]
        else:
            sweep["tau"] = [0.05, 0.1, 0.2, 0.3]
        if args.include_shared:
            sweep["eta"] = [0.03, 0.01, 0.003, 0.001, 0.0001]
            sweep["weight_decay"] = [0.001, 0.0001, 0.00001]
        spec = dataclasses.replace(spec, sweep=sweep)
    _, summaries = experiments.run(spec)
    best = grid_select(summaries)
    print(json.dumps({"best_cell": best["cell"],
                      "overrides": best["cell_overrides"],
                      "val_loss_mean": best["val_loss_mean"]},
                     sort_keys=True))
    return 0


def _cmd_eval(args) -> int:
    spec = _spec_from_args(args)
    model, _ = load_checkpoint(args.checkpoint)
    splits = build_splits(spec.dataset, spec.seed)
    feats, labels, k = experiments._eval_arrays(splits, args.split)
    preds = predict_labels(model, feats)
    report = evaluate(preds, labels, K=k, n_out=model.n_out, split_tag=args.split)
    print(report_to_json(report))
    return 0


def _cmd_gen_data(args) -> int:
    spec = _spec_from_args(args)
    splits = build_splits(spec.dataset, spec.seed)
    os.makedirs(spec.out_dir, exist_ok=True)
    for name, ds in splits.items():
        save_dataset(ds, os.path.join(spec.out_dir, f"{name}.csv"))
    print(f"wrote train/val/test CSVs to {spec.out_dir}")
    return 0


_COMMANDS = {"run": _cmd_run, "suite": _cmd_suite, "grid": _cmd_grid,
             "eval": _cmd_eval, "gen-data": _cmd_gen_data}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SpecError as exc:
        print(f"invalid spec: {exc}", file=sys.stderr)
        return 1
    try:
        return _COMMANDS[args.verb](args)
    except (SpecError, ValueError) as exc:
        print(f"invalid spec: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - surface as exit code 2
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
