"""Datasets, constraint mining, vector-space augmentation, and annotation noise.

Feature vectors live in plain float64 numpy matrices. Pairwise constraints are
mined from ground-truth labels: c = 1 (must-link) when the two samples share a
label, c = 0 (cannot-link) otherwise. Weak/strong augmentation is additive
Gaussian jitter, with the strong variant adding larger jitter plus per-coordinate
dropout, so the "strong is a harsher version of weak" ordering needed by
consistency training holds for vector data.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

SPLIT_TAGS = ("train", "val", "test")

# Class means are placed on coordinate axes this many within-class stddevs
# apart; comfortably above the 4-sigma floor needed for near-separable blobs.
MEAN_SEPARATION_FACTOR = 6.0


class DatasetFormatError(ValueError):
    """A dataset or constraint CSV could not be parsed."""

    def __init__(self, message: str, line_no: int | None = None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


class DimensionMismatchError(DatasetFormatError):
    """A CSV row has a different arity than the header."""


@dataclass(frozen=True)
class Dataset:
    """An immutable feature matrix with optional integer class labels.

    features: (n, d) float matrix, one sample per row.
    labels:   (n,) ints in [0, K), or None for unlabeled data.
    K:        number of ground-truth classes (None when unlabeled).
    split_tag: which split this data belongs to (train/val/test).
    """

    features: np.ndarray
    labels: np.ndarray | None = None
    K: int | None = None
    split_tag: str = "train"

    def __post_init__(self):
        feats = np.ascontiguousarray(np.asarray(self.features, dtype=np.float64))
        if feats.ndim != 2 or feats.shape[0] < 1 or feats.shape[1] < 1:
            raise ValueError(f"features must be a non-empty 2-D matrix, got shape {feats.shape}")
        if not np.all(np.isfinite(feats)):
            raise ValueError("features contain non-finite values")
        feats.setflags(write=False)
        object.__setattr__(self, "features", feats)

        if self.labels is not None:
            labels = np.ascontiguousarray(np.asarray(self.labels, dtype=np.int64))
            if labels.shape != (feats.shape[0],):
                raise ValueError("labels must be one integer per sample")
            if self.K is None:
                object.__setattr__(self, "K", int(labels.max()) + 1)
            k = self.K
            if labels.min() < 0 or labels.max() >= k:
                raise ValueError(f"labels must lie in [0, {k})")
            present = np.bincount(labels, minlength=k)
            if np.any(present == 0):
                missing = int(np.flatnonzero(present == 0)[0])
                raise ValueError(f"class {missing} has no samples")
            labels.setflags(write=False)
            object.__setattr__(self, "labels", labels)
        elif self.K is not None:
            raise ValueError("K given without labels")

        if self.split_tag not in SPLIT_TAGS:
            raise ValueError(f"split_tag must be one of {SPLIT_TAGS}")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class ConstraintPair:
    """A binary pairwise constraint between samples i and j.

    c = 1 means must-link (same cluster), c = 0 cannot-link.
    """

    i: int
    j: int
    c: int

    def __post_init__(self):
        if self.i == self.j:
            raise ValueError("a constraint needs two distinct samples")
        if self.i < 0 or self.j < 0:
            raise ValueError("sample indices must be non-negative")
        if self.c not in (0, 1):
            raise ValueError("c must be 0 or 1")


@dataclass(frozen=True)
class AugmentationPolicy:
    """Noise levels for the weak and strong augmentations.

    Sigmas may be scalars or per-dimension vectors. Note strong_dropout = 1
    is permitted (it zeroes every coordinate) even though training policies
    should stay below it.
    """

    weak_sigma: float | np.ndarray = 0.0
    strong_sigma: float | np.ndarray = 0.0
    strong_dropout: float = 0.0
    seed: int = 0

    def __post_init__(self):
        weak = np.asarray(self.weak_sigma, dtype=np.float64)
        strong = np.asarray(self.strong_sigma, dtype=np.float64)
        if np.any(weak < 0) or np.any(strong < 0):
            raise ValueError("sigmas must be non-negative")
        if np.any(weak > strong):
            raise ValueError("weak_sigma must not exceed strong_sigma")
        if not 0.0 <= self.strong_dropout <= 1.0:
            raise ValueError("strong_dropout must lie in [0, 1]")


@dataclass(frozen=True)
class NoiseConfig:
    """Annotation-noise settings for robustness experiments.

    constraint_flip_fraction: fraction of ground-truth constraints inverted.
    pseudo_flip_fraction: probability rho of mode-flipping each unconstrained
    batch prediction before pseudo-label selection.
    """

    constraint_flip_fraction: float = 0.0
    pseudo_flip_fraction: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("constraint_flip_fraction", "pseudo_flip_fraction"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")


def class_means(k: int, d: int, spread: float) -> np.ndarray:
    """Deterministic grid of class means used by make_blobs.

    Class c sits on axis c mod d at offset (1 + c // d) * 6 * spread, so any
    two means are at least 6 spreads apart. The layout depends only on
    (k, d, spread): train/val/test splits generated with different seeds share
    the same underlying clusters.
    """
    means = np.zeros((k, d))
    sep = MEAN_SEPARATION_FACTOR * spread
    for c in range(k):
        means[c, c % d] = sep * (1 + c // d)
    return means


def make_blobs(k: int, per_class: int, d: int, spread: float, seed: int,
               split_tag: str = "train") -> Dataset:
    """Generate an isotropic Gaussian-blob dataset with k balanced classes.

    Args:
        k: number of classes (>= 2).
        per_class: samples per class (>= 1).
        d: feature dimension (>= 1).
        spread: within-class standard deviation (> 0).
        seed: RNG seed; identical arguments give bit-identical features.
    """
    if k < 2:
        raise ValueError("k must be at least 2")
    if per_class < 1:
        raise ValueError("per_class must be at least 1")
    if d < 1:
        raise ValueError("d must be at least 1")
    if not spread > 0:
        raise ValueError("spread must be positive")
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(k, dtype=np.int64), per_class)
    means = class_means(k, d, spread)
    features = means[labels] + rng.normal(0.0, spread, size=(k * per_class, d))
    return Dataset(features=features, labels=labels, K=k, split_tag=split_tag)


def sample_constraints(ds: Dataset, n_c: int, seed: int) -> list[ConstraintPair]:
    """Mine n_c pairwise constraints from a labeled dataset.

    First members are drawn without replacement; for each, the second member
    is drawn with replacement from all remaining samples. Duplicate unordered
    pairs may occur and are kept (a count is logged).
    """
    if ds.labels is None:
        raise ValueError("constraint sampling needs a labeled dataset")
    if n_c > ds.n:
        raise ValueError(f"n_c = {n_c} exceeds the {ds.n} available samples")
    if n_c < 0:
        raise ValueError("n_c must be non-negative")
    rng = np.random.default_rng(seed)
    firsts = rng.choice(ds.n, size=n_c, replace=False)
    seconds = rng.integers(0, ds.n - 1, size=n_c)
    seconds = seconds + (seconds >= firsts)  # skip the first member itself
    cs = (ds.labels[firsts] == ds.labels[seconds]).astype(np.int64)
    pairs = [ConstraintPair(int(i), int(j), int(c))
             for i, j, c in zip(firsts, seconds, cs)]
    n_dup = n_c - len({frozenset((p.i, p.j)) for p in pairs})
    if n_dup:
        logger.info("constraint sampling produced %d duplicate pairs", n_dup)
    return pairs


def dense_constraints(ds: Dataset, max_pairs: int, seed: int) -> list[ConstraintPair]:
    """All-pairs ground-truth constraints, uniformly subsampled to max_pairs.

    Used for the fully-constrained upper-bound regime.
    """
    if ds.labels is None:
        raise ValueError("dense constraint mining needs a labeled dataset")
    n = ds.n
    total = n * (n - 1) // 2
    rng = np.random.default_rng(seed)
    if total <= max_pairs:
        ii, jj = np.triu_indices(n, k=1)
    else:
        flat = np.sort(rng.choice(total, size=max_pairs, replace=False))
        # invert the row-major upper-triangle enumeration
        ii = np.empty(max_pairs, dtype=np.int64)
        jj = np.empty(max_pairs, dtype=np.int64)
        row_starts = np.cumsum(np.concatenate(([0], np.arange(n - 1, 0, -1))))
        ii = np.searchsorted(row_starts, flat, side="right") - 1
        jj = flat - row_starts[ii] + ii + 1
    cs = (ds.labels[ii] == ds.labels[jj]).astype(np.int64)
    return [ConstraintPair(int(i), int(j), int(c)) for i, j, c in zip(ii, jj, cs)]


def _augment_batch(x: np.ndarray, policy: AugmentationPolicy, strength: str,
                   rng: np.random.Generator) -> np.ndarray:
    if strength not in ("weak", "strong"):
        raise ValueError("strength must be 'weak' or 'strong'")
    sigma = policy.weak_sigma if strength == "weak" else policy.strong_sigma
    out = x + rng.standard_normal(x.shape) * sigma
    if strength == "strong":
        dropped = rng.random(x.shape) < policy.strong_dropout
        out = np.where(dropped, 0.0, out)
    return out


def augment(x: np.ndarray, policy: AugmentationPolicy, strength: str,
            seed: int | None = None) -> np.ndarray:
    """Augment one feature vector; deterministic for a fixed seed.

    weak: additive Gaussian noise at weak_sigma. strong: additive noise at
    strong_sigma followed by independent per-coordinate zeroing with
    probability strong_dropout.
    """
    x = np.asarray(x, dtype=np.float64)
    rng = np.random.default_rng(policy.seed if seed is None else seed)
    return _augment_batch(x.reshape(1, -1), policy, strength, rng).reshape(x.shape)


def default_policy(features: np.ndarray | Dataset,
                   weak_scale: float = 0.05,
                   strong_scale: float = 0.25,
                   strong_dropout: float = 0.2,
                   seed: int = 0) -> AugmentationPolicy:
    """Augmentation policy scaled to the per-dimension feature stddev."""
    if isinstance(features, Dataset):
        features = features.features
    std = np.asarray(features, dtype=np.float64).std(axis=0)
    fallback = max(float(std.mean()), 1e-6)
    std = np.where(std > 0, std, fallback)
    return AugmentationPolicy(weak_sigma=weak_scale * std,
                              strong_sigma=strong_scale * std,
                              strong_dropout=strong_dropout,
                              seed=seed)


def flip_constraints(pairs: list[ConstraintPair], cfg: NoiseConfig) -> list[ConstraintPair]:
    """Invert round(fraction * n) constraint annotations, chosen uniformly.

    The count uses round-half-to-even so it is platform-stable. Pair order
    and indices are preserved; applying the same config twice restores the
    original list.
    """
    n = len(pairs)
    n_flip = round(cfg.constraint_flip_fraction * n)
    rng = np.random.default_rng(cfg.seed)
    flip_at = set(rng.choice(n, size=n_flip, replace=False).tolist()) if n_flip else set()
    return [ConstraintPair(p.i, p.j, 1 - p.c) if idx in flip_at else p
            for idx, p in enumerate(pairs)]


def _format_value(v: float) -> str:
    return repr(float(v))


def save_dataset(ds: Dataset, path) -> None:
    """Write a dataset to CSV: header f0..f{d-1}[,label], one sample per row."""
    with open(path, "w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        header = [f"f{i}" for i in range(ds.d)]
        if ds.labels is not None:
            header.append("label")
        writer.writerow(header)
        for row_idx in range(ds.n):
            row = [_format_value(v) for v in ds.features[row_idx]]
            if ds.labels is not None:
                row.append(str(int(ds.labels[row_idx])))
            writer.writerow(row)


def load_dataset(path, split_tag: str = "train") -> Dataset:
    """Read a dataset CSV written by save_dataset (or matching its format)."""
    with open(path, "r", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetFormatError("empty file", line_no=1) from None
        has_label = bool(header) and header[-1].strip().lower() == "label"
        d = len(header) - (1 if has_label else 0)
        if d < 1:
            raise DatasetFormatError("no feature columns in header", line_no=1)
        feats: list[list[float]] = []
        labels: list[int] = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DimensionMismatchError(
                    f"expected {len(header)} columns, got {len(row)}", line_no=line_no)
            try:
                feats.append([float(v) for v in row[:d]])
            except ValueError as exc:
                raise DatasetFormatError(str(exc), line_no=line_no) from None
            if has_label:
                try:
                    labels.append(int(row[d]))
                except ValueError as exc:
                    raise DatasetFormatError(str(exc), line_no=line_no) from None
    if not feats:
        raise DatasetFormatError("file has a header but no samples", line_no=1)
    return Dataset(features=np.asarray(feats, dtype=np.float64),
                   labels=np.asarray(labels, dtype=np.int64) if has_label else None,
                   split_tag=split_tag)


def save_constraints(pairs: list[ConstraintPair], path) -> None:
    """Write constraints to CSV with header i,j,c (integer columns)."""
    with open(path, "w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["i", "j", "c"])
        for p in pairs:
            writer.writerow([p.i, p.j, p.c])


def load_constraints(path) -> list[ConstraintPair]:
    """Read a constraint CSV written by save_constraints."""
    pairs = []
    with open(path, "r", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["i", "j", "c"]:
            raise DatasetFormatError("expected header i,j,c", line_no=1)
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise DimensionMismatchError("expected 3 columns", line_no=line_no)
            try:
                pairs.append(ConstraintPair(int(row[0]), int(row[1]), int(row[2])))
            except ValueError as exc:
                raise DatasetFormatError(str(exc), line_no=line_no) from None
    return pairs
