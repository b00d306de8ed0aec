"""Clustering evaluation: optimal cluster-to-class mapping and metrics.

Cluster predictions are mapped to ground-truth classes with the Hungarian
assignment on the (negated) contingency counts. In the overclustering case
(n_out > K) the contingency is zero-padded to square, so clusters assigned to
a padding row match no real class and count as errors. ACC is the matched
fraction; NMI uses geometric-mean normalization; ARI is the permutation-model
adjusted Rand index.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import xlogy


@dataclass(frozen=True)
class Contingency:
    """Class-by-cluster count matrix with marginals."""

    counts: np.ndarray  # (K, n_out) int64
    row_marginals: np.ndarray = field(init=False)
    col_marginals: np.ndarray = field(init=False)
    n: int = field(init=False)

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 2 or np.any(counts < 0):
            raise ValueError("counts must be a non-negative 2-D matrix")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "row_marginals", counts.sum(axis=1))
        object.__setattr__(self, "col_marginals", counts.sum(axis=0))
        object.__setattr__(self, "n", int(counts.sum()))

    @classmethod
    def from_predictions(cls, preds, labels, K: int, n_out: int) -> "Contingency":
        preds = np.asarray(preds, dtype=np.int64)
        labels = np.asarray(labels, dtype=np.int64)
        if preds.shape != labels.shape or preds.ndim != 1 or preds.size == 0:
            raise ValueError("preds and labels must be equal-length non-empty vectors")
        if preds.min() < 0 or preds.max() >= n_out:
            raise ValueError(f"predictions must lie in [0, {n_out})")
        if labels.min() < 0 or labels.max() >= K:
            raise ValueError(f"labels must lie in [0, {K})")
        counts = np.zeros((K, n_out), dtype=np.int64)
        np.add.at(counts, (labels, preds), 1)
        return cls(counts=counts)


@dataclass(frozen=True)
class EvalReport:
    """ACC/NMI/ARI plus the cluster-to-class mapping for one evaluation.

    mapping sends cluster ids to class ids and is partial when n_out > K:
    unmapped clusters contributed zero correct predictions.
    """

    acc: float
    nmi: float
    ari: float
    mapping: dict[int, int]
    split_tag: str = "test"


def hungarian(cost: np.ndarray) -> np.ndarray:
    """Assignment perm minimizing sum(cost[r, perm[r]]) over permutations.

    Ties are broken deterministically: among all optimal assignments the
    lexicographically smallest permutation is returned.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1] or cost.shape[0] < 1:
        raise ValueError("cost must be a square matrix of size >= 1")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost entries must be finite")
    n = cost.shape[0]
    rows, cols = linear_sum_assignment(cost)
    best = float(cost[rows, cols].sum())
    tol = 1e-9 * (1.0 + abs(best))

    # refine to the lexicographically smallest optimal permutation: fix each
    # row's column to the smallest choice that still completes optimally
    perm = np.empty(n, dtype=np.int64)
    available = list(range(n))
    fixed_cost = 0.0
    for row in range(n):
        remaining_rows = np.arange(row + 1, n)
        for idx, col in enumerate(available):
            rest = available[:idx] + available[idx + 1:]
            sub_cost = 0.0
            if remaining_rows.size:
                sub = cost[np.ix_(remaining_rows, rest)]
                r, c = linear_sum_assignment(sub)
                sub_cost = float(sub[r, c].sum())
            if fixed_cost + cost[row, col] + sub_cost <= best + tol:
                perm[row] = col
                fixed_cost += cost[row, col]
                available.pop(idx)
                break
        else:  # pragma: no cover - optimality guarantees a choice exists
            raise RuntimeError("no optimal completion found")
    return perm


def _nmi_from_counts(counts: np.ndarray) -> float:
    n = counts.sum()
    a = counts.sum(axis=1)
    b = counts.sum(axis=0)
    nz = counts > 0
    p = counts[nz] / n
    outer = np.outer(a, b)[nz] / (n * n)
    mi = float(np.sum(p * np.log(p / outer)))
    h_true = float(-xlogy(a / n, a / n).sum())
    h_pred = float(-xlogy(b / n, b / n).sum())
    denom = math.sqrt(h_true * h_pred)
    if denom <= 0.0:
        return 0.0  # degenerate single-cluster partition
    return max(mi, 0.0) / denom


def _ari_from_counts(counts: np.ndarray) -> float:
    n = counts.sum()
    comb = lambda x: x * (x - 1) / 2.0
    sum_ij = float(comb(counts).sum())
    sum_a = float(comb(counts.sum(axis=1)).sum())
    sum_b = float(comb(counts.sum(axis=0)).sum())
    total = comb(float(n))
    if total == 0:
        return 1.0
    expected = sum_a * sum_b / total
    maximum = 0.5 * (sum_a + sum_b)
    if maximum == expected:
        return 1.0  # both partitions trivially agree in pair structure
    return (sum_ij - expected) / (maximum - expected)


def evaluate(preds, labels, K: int, n_out: int, split_tag: str = "test") -> EvalReport:
    """Score hard cluster predictions against ground-truth labels.

    Requires n_out >= K. Clusters mapped to a zero-padded class (the
    overclustering case) count as errors.
    """
    if n_out < K:
        raise ValueError("n_out must be at least K")
    table = Contingency.from_predictions(preds, labels, K=K, n_out=n_out)
    padded = np.zeros((n_out, n_out), dtype=np.int64)
    padded[:K, :] = table.counts
    perm = hungarian(-padded.astype(np.float64))
    mapping = {int(perm[r]): r for r in range(K)}
    matched = int(padded[np.arange(K), perm[:K]].sum())
    acc = matched / table.n
    return EvalReport(acc=float(acc),
                      nmi=float(_nmi_from_counts(table.counts)),
                      ari=float(_ari_from_counts(table.counts)),
                      mapping=mapping,
                      split_tag=split_tag)


METRICS = ("acc", "nmi", "ari")


def aggregate_folds(reports: list[EvalReport]) -> dict[str, float]:
    """Mean and sample standard deviation per metric over fold reports."""
    if not reports:
        raise ValueError("no reports to aggregate")
    out: dict[str, float] = {}
    for metric in METRICS:
        values = np.asarray([getattr(r, metric) for r in reports], dtype=np.float64)
        out[f"{metric}_mean"] = float(values.mean())
        out[f"{metric}_std"] = float(values.std(ddof=1)) if values.size > 1 else 0.0
    return out


def report_csv_row(report: EvalReport, regime: str, dataset: str,
                   n_c: int, fold: int) -> list[str]:
    """The fixed-order result row: regime, dataset, n_c, fold, split, acc, nmi, ari."""
    return [regime, dataset, str(int(n_c)), str(int(fold)), report.split_tag,
            repr(report.acc), repr(report.nmi), repr(report.ari)]


def report_to_json(report: EvalReport) -> str:
    """Flat JSON object for one report; the mapping renders as 'cluster:class' pairs."""
    mapping = " ".join(f"{c}:{k}" for c, k in sorted(report.mapping.items()))
    payload = {
        "split": report.split_tag,
        "acc": report.acc,
        "nmi": report.nmi,
        "ari": report.ari,
        "mapping": mapping,
    }
    return json.dumps(payload)
