"""Experiment runner: sweeps, fold repetition, grid selection, ablation suites.

A run expands an ExperimentSpec into (cell x fold) training runs. Constraint
folds are seeded per fold (not per cell), so every cell of a sweep sees the
same five constraint samples and fold-level comparisons across cells are
paired. All outputs are plain CSV / JSON-lines, written atomically, with no
timestamps, so re-running an identical spec overwrites every file with
identical bytes.
"""

from __future__ import annotations

import concurrent.futures
import dataclasses
import hashlib
import itertools
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .data import (Dataset, NoiseConfig, dense_constraints, flip_constraints,
                   load_dataset, make_blobs, sample_constraints)
from .evaluation import aggregate_folds, evaluate
from .network import predict_labels, save_checkpoint
from .pseudo import SelectionConfig
from .seeds import derive_seed
from .training import (TrainConfig, train, validation_constraint_loss)

PRESETS = {
    "blobs4": {"k": 4, "per_class": 500, "d": 2, "spread": 0.5},
    "blobs20": {"k": 20, "per_class": 200, "d": 10, "spread": 1.0},
}

# fields a sweep axis or explicit cell may override
CELL_KEYS = ("tau", "lam", "mu", "soft_pc", "rho", "flip_frac", "n_c", "n_out",
             "regime", "selection_mode", "eta", "weight_decay", "T",
             "warmup_steps", "label", "x")

RESULT_COLUMNS = ("cell", "params", "regime", "dataset", "n_c", "fold", "split",
                  "acc", "nmi", "ari", "val_loss")
SUMMARY_COLUMNS = ("cell", "params", "regime", "dataset", "n_c", "split", "folds",
                   "acc_mean", "acc_std", "nmi_mean", "nmi_std", "ari_mean",
                   "ari_std", "val_loss_mean")
PLOTDATA_COLUMNS = ("suite", "x", "regime", "acc_mean", "acc_std", "nmi_mean",
                    "nmi_std", "ari_mean", "ari_std")

DENSE_PAIR_CAP = 50000


@dataclass
class ExperimentSpec:
    """A resolved experiment: dataset, folds, training knobs, sweep axes."""

    dataset: str = "blobs4"
    n_c: int = 100
    folds: int = 5
    regime: str = "constraintmatch"
    eval_splits: tuple[str, ...] = ("test",)
    out_dir: str = "results"
    seed: int = 0
    jobs: int = 1
    n_out: int | None = None
    hidden_dims: tuple[int, ...] = (64, 64)
    tau: float = 0.2
    selection_mode: str = "informativeness"
    lam: float = 1.0
    soft_pc: bool = True
    mu: float = 0.5
    rho: float = 0.0
    flip_frac: float = 0.0
    eta: float = 0.1
    T: int = 2000
    momentum: float = 0.9
    weight_decay: float = 1e-4
    warmup_steps: int = 200
    batch_c: int = 64
    batch_u: int = 192
    max_pseudo_pairs: int = 20000
    sweep: dict = field(default_factory=dict)
    cells: list | None = None
    suite: str | None = None

    def __post_init__(self):
        if self.folds < 1:
            raise ValueError("folds must be at least 1")
        if isinstance(self.eval_splits, str):
            self.eval_splits = (self.eval_splits,)
        self.eval_splits = tuple(self.eval_splits)
        self.hidden_dims = tuple(int(w) for w in self.hidden_dims)
        for key in self.sweep:
            if key not in CELL_KEYS:
                raise ValueError(f"unknown sweep axis {key!r}")
        if self.cells is not None:
            for cell in self.cells:
                for key in cell:
                    if key not in CELL_KEYS:
                        raise ValueError(f"unknown cell override {key!r}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["eval_splits"] = list(self.eval_splits)
        d["hidden_dims"] = list(self.hidden_dims)
        return d

    def spec_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def parse_dataset_spec(spec: str) -> dict:
    """Resolve a dataset string to blobs parameters or file paths.

    Accepts a preset name ('blobs4', 'blobs20'), an inline generator spec
    'blobs:k=4,per_class=100,d=2,spread=0.5', a directory containing
    train.csv/val.csv/test.csv, or a single CSV file (used for every split).
    """
    if spec in PRESETS:
        return {"kind": "blobs", **PRESETS[spec]}
    if spec.startswith("blobs:"):
        params = dict(PRESETS["blobs4"])
        for item in spec[len("blobs:"):].split(","):
            key, _, value = item.partition("=")
            key = key.strip()
            if key not in ("k", "per_class", "d", "spread"):
                raise ValueError(f"unknown blobs parameter {key!r}")
            params[key] = float(value) if key == "spread" else int(value)
        return {"kind": "blobs", **params}
    if os.path.isdir(spec):
        return {"kind": "dir", "path": spec}
    if os.path.isfile(spec):
        return {"kind": "file", "path": spec}
    raise ValueError(f"unknown dataset spec {spec!r}")


def build_splits(dataset: str, seed: int) -> dict[str, Dataset]:
    """Train/val/test datasets for a dataset spec, deterministic per seed.

    Generated splits share their class means and differ only in sample noise;
    val holds per_class // 4 samples per class and test per_class // 2.
    """
    info = parse_dataset_spec(dataset)
    if info["kind"] == "blobs":
        k, d, spread = info["k"], info["d"], info["spread"]
        sizes = {"train": info["per_class"],
                 "val": max(info["per_class"] // 4, 1),
                 "test": max(info["per_class"] // 2, 1)}
        return {split: make_blobs(k, sizes[split], d, spread,
                                  seed=derive_seed(seed, "data", dataset, split),
                                  split_tag=split)
                for split in ("train", "val", "test")}
    if info["kind"] == "dir":
        return {split: load_dataset(os.path.join(info["path"], f"{split}.csv"),
                                    split_tag=split)
                for split in ("train", "val", "test")}
    ds = load_dataset(info["path"], split_tag="train")
    return {"train": ds,
            "val": dataclasses.replace(ds, split_tag="val"),
            "test": dataclasses.replace(ds, split_tag="test")}


def _resolve_cells(spec: ExperimentSpec) -> list[dict]:
    if spec.cells is not None:
        return [dict(c) for c in spec.cells]
    if spec.sweep:
        keys = sorted(spec.sweep)
        cells = []
        for combo in itertools.product(*(spec.sweep[k] for k in keys)):
            cells.append(dict(zip(keys, combo)))
        return cells
    return [{}]


def _cell_params_string(cell: dict) -> str:
    items = [f"{k}={cell[k]}" for k in sorted(cell) if k not in ("label", "x")]
    return ";".join(items) if items else "-"


def _cell_value(spec: ExperimentSpec, cell: dict, key: str):
    return cell.get(key, getattr(spec, key))


def _train_config(spec: ExperimentSpec, cell: dict, fold: int) -> TrainConfig:
    regime = _cell_value(spec, cell, "regime")
    selection = SelectionConfig(mode=_cell_value(spec, cell, "selection_mode"),
                                tau=_cell_value(spec, cell, "tau"))
    noise = NoiseConfig(pseudo_flip_fraction=_cell_value(spec, cell, "rho"))
    return TrainConfig(
        regime=regime,
        n_out=_cell_value(spec, cell, "n_out"),
        hidden_dims=spec.hidden_dims,
        batch_c=spec.batch_c,
        batch_u=spec.batch_u,
        lam=_cell_value(spec, cell, "lam"),
        selection=selection,
        soft_pc=_cell_value(spec, cell, "soft_pc"),
        mu=_cell_value(spec, cell, "mu"),
        noise=noise,
        eta=_cell_value(spec, cell, "eta"),
        T=_cell_value(spec, cell, "T"),
        momentum=spec.momentum,
        weight_decay=_cell_value(spec, cell, "weight_decay"),
        warmup_steps=_cell_value(spec, cell, "warmup_steps"),
        max_pseudo_pairs=spec.max_pseudo_pairs,
        seed=derive_seed(spec.seed, "train", fold),
    )


def _eval_arrays(splits: dict[str, Dataset], split_spec: str):
    """Features/labels/K for one requested split; supports unions like train+test."""
    parts = split_spec.split("+")
    for part in parts:
        if part not in splits:
            raise ValueError(f"unknown split {part!r}")
        if splits[part].labels is None:
            raise ValueError(f"split {part!r} is unlabeled")
    feats = np.vstack([splits[p].features for p in parts])
    labels = np.concatenate([splits[p].labels for p in parts])
    return feats, labels, max(splits[p].K for p in parts)


def _run_one(spec: ExperimentSpec, splits: dict[str, Dataset], cell: dict,
             cell_id: str, fold: int):
    """Train and evaluate one (cell, fold); returns result rows and trace."""
    train_ds = splits["train"]
    n_c = int(_cell_value(spec, cell, "n_c"))
    regime = _cell_value(spec, cell, "regime")
    if regime == "fully_constrained":
        constraints = dense_constraints(train_ds, max_pairs=DENSE_PAIR_CAP,
                                        seed=derive_seed(spec.seed, "dense", fold))
    else:
        constraints = sample_constraints(train_ds, n_c,
                                         seed=derive_seed(spec.seed, "cons", fold, n_c))
    flip = float(_cell_value(spec, cell, "flip_frac"))
    if flip > 0:
        constraints = flip_constraints(constraints, NoiseConfig(
            constraint_flip_fraction=flip,
            seed=derive_seed(spec.seed, "flip", fold)))
    cfg = _train_config(spec, cell, fold)
    model, trace = train(train_ds, constraints, cfg)

    val = splits["val"]
    val_constraints = sample_constraints(val, min(n_c, val.n),
                                         seed=derive_seed(spec.seed, "valcons", fold, n_c))
    val_loss = (validation_constraint_loss(model, val, val_constraints)
                if val_constraints else float("nan"))

    rows = []
    reports = {}
    for split_spec in spec.eval_splits:
        feats, labels, k = _eval_arrays(splits, split_spec)
        preds = predict_labels(model, feats)
        report = evaluate(preds, labels, K=k, n_out=model.n_out,
                          split_tag=split_spec)
        reports[split_spec] = report
        rows.append([cell_id, _cell_params_string(cell), regime, spec.dataset,
                     str(n_c), str(fold), split_spec, repr(report.acc),
                     repr(report.nmi), repr(report.ari), repr(val_loss)])
    return {"rows": rows, "reports": reports, "val_loss": val_loss,
            "trace": trace, "model": model, "cfg": cfg}


def _atomic_write(path, text: str) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _csv_text(header, rows) -> str:
    lines = [",".join(header)]
    lines.extend(",".join(str(v) for v in row) for row in rows)
    return "\n".join(lines) + "\n"


def run(spec: ExperimentSpec, keep_checkpoints: bool = True):
    """Execute every (cell x fold) run of a spec and write the result files.

    Writes results.csv, summary.csv, spec.json, and one trace-<run-id>.jsonl
    plus checkpoint per run into spec.out_dir. Failed runs are recorded in
    failures.csv and the remaining runs continue. Returns (result_rows,
    summary_rows) as lists of dicts for programmatic use.
    """
    os.makedirs(spec.out_dir, exist_ok=True)
    if keep_checkpoints:
        os.makedirs(os.path.join(spec.out_dir, "checkpoints"), exist_ok=True)
    splits = build_splits(spec.dataset, spec.seed)
    cells = _resolve_cells(spec)

    spec_doc = spec.to_dict()
    spec_doc["spec_hash"] = spec.spec_hash()
    _atomic_write(os.path.join(spec.out_dir, "spec.json"),
                  json.dumps(spec_doc, sort_keys=True, indent=2) + "\n")

    jobs = [(ci, cell, fold) for ci, cell in enumerate(cells)
            for fold in range(spec.folds)]

    def execute(job):
        ci, cell, fold = job
        cell_id = f"c{ci:02d}"
        run_id = f"{cell_id}-f{fold}"
        try:
            result = _run_one(spec, splits, cell, cell_id, fold)
        except Exception as exc:  # noqa: BLE001 - runs must not kill the sweep
            return run_id, None, f"{type(exc).__name__}: {exc}"
        return run_id, result, None

    outcomes = []
    if spec.jobs > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=spec.jobs) as pool:
            outcomes = list(pool.map(execute, jobs))
    else:
        outcomes = [execute(job) for job in jobs]

    result_rows = []
    failures = []
    per_cell: dict[str, dict] = {}
    for (ci, cell, fold), (run_id, result, error) in zip(jobs, outcomes):
        cell_id = f"c{ci:02d}"
        if error is not None:
            failures.append([run_id, error])
            continue
        trace_path = os.path.join(spec.out_dir, f"trace-{run_id}.jsonl")
        result["trace"].write_jsonl(trace_path)
        if keep_checkpoints:
            ckpt = os.path.join(spec.out_dir, "checkpoints", f"{run_id}.ckpt")
            save_checkpoint(ckpt, result["model"])
            result["trace"].checkpoint_path = ckpt
        result_rows.extend(result["rows"])
        bucket = per_cell.setdefault(cell_id, {
            "cell": cell, "reports": {}, "val_losses": []})
        for split_spec, report in result["reports"].items():
            bucket["reports"].setdefault(split_spec, []).append(report)
        bucket["val_losses"].append(result["val_loss"])

    summary_rows = []
    summaries = []
    for ci, cell in enumerate(cells):
        cell_id = f"c{ci:02d}"
        if cell_id not in per_cell:
            continue
        bucket = per_cell[cell_id]
        val_mean = float(np.mean(bucket["val_losses"]))
        for split_spec in spec.eval_splits:
            reports = bucket["reports"].get(split_spec, [])
            if not reports:
                continue
            stats = aggregate_folds(reports)
            row = [cell_id, _cell_params_string(cell),
                   _cell_value(spec, cell, "regime"), spec.dataset,
                   str(int(_cell_value(spec, cell, "n_c"))), split_spec,
                   str(len(reports)),
                   repr(stats["acc_mean"]), repr(stats["acc_std"]),
                   repr(stats["nmi_mean"]), repr(stats["nmi_std"]),
                   repr(stats["ari_mean"]), repr(stats["ari_std"]),
                   repr(val_mean)]
            summary_rows.append(row)
            summaries.append({
                "cell": cell_id, "cell_overrides": dict(cell),
                "regime": _cell_value(spec, cell, "regime"),
                "split": split_spec, "folds": len(reports),
                "lam": float(_cell_value(spec, cell, "lam")),
                "tau": float(_cell_value(spec, cell, "tau")),
                "val_loss_mean": val_mean, **stats})

    _atomic_write(os.path.join(spec.out_dir, "results.csv"),
                  _csv_text(RESULT_COLUMNS, result_rows))
    _atomic_write(os.path.join(spec.out_dir, "summary.csv"),
                  _csv_text(SUMMARY_COLUMNS, summary_rows))
    if failures:
        _atomic_write(os.path.join(spec.out_dir, "failures.csv"),
                      _csv_text(("run", "error"), failures))
    return result_rows, summaries


def grid_select(summaries: list[dict], criterion: str = "val_loss_mean") -> dict:
    """Pick the sweep cell with the lowest final validation constrained loss.

    Ties break toward smaller lam, then smaller tau. Summaries with multiple
    splits per cell are deduplicated (the criterion is split-independent).
    """
    if not summaries:
        raise ValueError("no summaries to select from")
    seen = {}
    for s in summaries:
        seen.setdefault(s["cell"], s)
    candidates = [s for s in seen.values() if np.isfinite(s.get(criterion, np.nan))]
    if not candidates:
        raise ValueError("no cell carries a finite selection criterion")
    return min(candidates, key=lambda s: (s[criterion], s["lam"], s["tau"]))


# --- ablation suites -------------------------------------------------------

CONFIDENCE_GRID = (0.7, 0.8, 0.9, 0.95, 0.99)
TAU_GRID = (0.05, 0.1, 0.2, 0.3)
MU_GRID = (0.3, 0.5, 0.7, 0.9)
RHO_GRID = (0.0, 0.1, 0.3, 0.5, 0.7)
FLIP_GRID = (0.0, 0.1, 0.2, 0.3)
NC_GRID = (20, 40, 100, 200)


def suite_spec(name: str, seed: int = 0, out_dir: str | None = None) -> ExperimentSpec:
    """The ExperimentSpec for a named ablation suite with its default axes."""
    out = out_dir or os.path.join("results", f"suite-{name}")
    if name == "soft_vs_hard":
        cells = [{"label": "soft", "x": "soft", "soft_pc": True}]
        cells += [{"label": f"mu={m}", "x": f"mu={m}", "soft_pc": False, "mu": m}
                  for m in MU_GRID]
        return ExperimentSpec(dataset="blobs20", n_c=200, regime="constraintmatch",
                              cells=cells, out_dir=out, seed=seed, suite=name)
    if name == "info_vs_conf":
        cells = [{"label": "info", "x": "info@0.2",
                  "selection_mode": "informativeness", "tau": 0.2}]
        cells += [{"label": f"conf={t}", "x": f"conf@{t}",
                   "selection_mode": "confidence", "tau": t}
                  for t in CONFIDENCE_GRID]
        return ExperimentSpec(dataset="blobs20", n_c=200, regime="constraintmatch",
                              cells=cells, out_dir=out, seed=seed, suite=name)
    if name == "tau_sensitivity":
        cells = [{"label": f"tau={t}", "x": t, "tau": t} for t in TAU_GRID]
        return ExperimentSpec(dataset="blobs20", n_c=200, regime="constraintmatch",
                              cells=cells, out_dir=out, seed=seed, suite=name)
    if name == "n_c_sweep":
        cells = [{"label": f"{r}@{n}", "x": n, "regime": r, "n_c": n}
                 for r in ("constrained", "constraintmatch") for n in NC_GRID]
        return ExperimentSpec(dataset="blobs20", cells=cells, out_dir=out,
                              seed=seed, suite=name)
    if name == "pl_noise":
        cells = []
        for rho in RHO_GRID:
            cells.append({"label": f"naive@{rho}", "x": rho, "regime": "naive_pl",
                          "selection_mode": "confidence", "tau": 0.95, "rho": rho})
            cells.append({"label": f"cm@{rho}", "x": rho,
                          "regime": "constraintmatch", "rho": rho})
        return ExperimentSpec(dataset="blobs4", n_c=100, cells=cells,
                              out_dir=out, seed=seed, suite=name)
    if name == "constraint_noise":
        cells = [{"label": f"{r}@{f}", "x": f, "regime": r, "flip_frac": f}
                 for r in ("constrained", "constraintmatch") for f in FLIP_GRID]
        return ExperimentSpec(dataset="blobs4", n_c=100, cells=cells,
                              out_dir=out, seed=seed, suite=name)
    if name == "overcluster":
        cells = [{"label": r, "x": "5K", "regime": r, "n_out": 5 * 4}
                 for r in ("constrained", "constraintmatch")]
        return ExperimentSpec(dataset="blobs4", n_c=100, cells=cells,
                              out_dir=out, seed=seed, suite=name)
    raise ValueError(f"unknown suite {name!r}")


SUITE_NAMES = ("soft_vs_hard", "info_vs_conf", "tau_sensitivity", "n_c_sweep",
               "pl_noise", "constraint_noise", "overcluster")


def ablation_suite(name: str, seed: int = 0, out_dir: str | None = None,
                   spec_overrides: dict | None = None):
    """Run a named ablation suite and emit its plot-data CSV.

    spec_overrides lets callers shrink a suite (fewer steps, smaller data)
    without changing its cell structure.
    """
    spec = suite_spec(name, seed=seed, out_dir=out_dir)
    if spec_overrides:
        spec = dataclasses.replace(spec, **spec_overrides)
    _, summaries = run(spec)
    cells = _resolve_cells(spec)
    by_cell = {s["cell"]: s for s in summaries if s["split"] == spec.eval_splits[0]}
    plot_rows = []
    for ci, cell in enumerate(cells):
        cell_id = f"c{ci:02d}"
        if cell_id not in by_cell:
            continue
        s = by_cell[cell_id]
        plot_rows.append([name, cell.get("x", "-"), s["regime"],
                          repr(s["acc_mean"]), repr(s["acc_std"]),
                          repr(s["nmi_mean"]), repr(s["nmi_std"]),
                          repr(s["ari_mean"]), repr(s["ari_std"])])
    _atomic_write(os.path.join(spec.out_dir, "plotdata.csv"),
                  _csv_text(PLOTDATA_COLUMNS, plot_rows))
    return spec, summaries
