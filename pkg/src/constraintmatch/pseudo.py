"""Pseudo-label selection and the mapping to soft pairwise pseudo-constraints.

Predictions over weakly augmented samples are filtered by an informativeness
criterion (low normalized entropy) or, for the baseline, a confidence
criterion (high maximal probability). Every unordered pair of selected
predictions is mapped to a soft constraint c = 1 - JSD(p, q), where JSD is the
base-2 Jensen-Shannon distance: 0 means must-link, 1 cannot-link. Base 2 is
required for the [0, 1] range. A mode-flip noise function simulates confident
cluster confusion for robustness studies.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import xlogy

SELECTION_MODES = ("informativeness", "confidence")

_LN2 = np.log(2.0)


@dataclass(frozen=True)
class PseudoConstraint:
    """A soft pairwise constraint between combined-batch positions i < j."""

    i: int
    j: int
    c_tilde: float

    def __post_init__(self):
        if not self.i < self.j:
            raise ValueError("pairs are stored canonically with i < j")
        if self.i < 0:
            raise ValueError("indices must be non-negative")
        if not 0.0 <= self.c_tilde <= 1.0:
            raise ValueError("c_tilde must lie in [0, 1]")


@dataclass(frozen=True)
class SelectionConfig:
    """Pseudo-label selection rule: mode plus threshold tau in [0, 1]."""

    mode: str = "informativeness"
    tau: float = 0.2

    def __post_init__(self):
        if self.mode not in SELECTION_MODES:
            raise ValueError(f"mode must be one of {SELECTION_MODES}")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must lie in [0, 1]")


def normalized_entropy(y: np.ndarray) -> float | np.ndarray:
    """Entropy of a probability vector divided by log(n_out), in [0, 1].

    1 for the uniform vector, 0 for one-hots; 0 log 0 counts as 0. Accepts a
    single vector or a (m, n_out) batch (one value per row).
    """
    y = np.asarray(y, dtype=np.float64)
    n_out = y.shape[-1]
    if n_out < 2:
        raise ValueError("normalized entropy is undefined for n_out < 2")
    h = -xlogy(y, y).sum(axis=-1) / np.log(n_out)
    return float(h) if h.ndim == 0 else h


def select(probs: np.ndarray, cfg: SelectionConfig) -> np.ndarray:
    """Boolean mask of predictions kept as pseudo-labels.

    informativeness: normalized entropy strictly below tau (tau = 0 selects
    nothing). confidence: maximal probability strictly above tau.
    """
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    if cfg.mode == "informativeness":
        return normalized_entropy(probs) < cfg.tau
    return probs.max(axis=1) > cfg.tau


_TINY = np.finfo(np.float64).tiny


def _plogp(rows: np.ndarray) -> np.ndarray:
    """sum_l x_l ln x_l per row, with 0 ln 0 = 0 (zeros clamped under the log)."""
    return (rows * np.log(np.maximum(rows, _TINY))).sum(axis=-1)


def jsd(p: np.ndarray, q: np.ndarray) -> float:
    """Base-2 Jensen-Shannon distance between two probability vectors.

    sqrt((KL(p||m) + KL(q||m)) / 2) with m = (p + q) / 2 and logs base 2,
    so the result lies in [0, 1]: 0 iff p = q, 1 for disjoint supports.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError("probability vectors must have equal length")
    stacked = np.vstack((p, q))
    return float(_jsd_rows(stacked, np.array([0]), np.array([1]),
                           _plogp(stacked))[0])


def _jsd_rows(probs: np.ndarray, ii: np.ndarray, jj: np.ndarray,
              plogp_rows: np.ndarray | None = None) -> np.ndarray:
    """Vectorized base-2 JSD for the row pairs (ii[k], jj[k]).

    Uses KL(p||m) + KL(q||m) = plogp(p) + plogp(q) - 2 plogp(m), which needs
    only one log pass over the pair midpoints.
    """
    if plogp_rows is None:
        plogp_rows = _plogp(probs)
    m = 0.5 * (probs[ii] + probs[jj])
    div = plogp_rows[ii] + plogp_rows[jj] - 2.0 * _plogp(m)
    div = np.maximum(0.5 * div / _LN2, 0.0)
    return np.minimum(np.sqrt(div), 1.0)


def pseudo_constraint_arrays(probs: np.ndarray, cfg: SelectionConfig,
                             max_pairs: int = 20000,
                             rng: np.random.Generator | int | None = None):
    """Array form of make_pseudo_constraints: (ii, jj, c_tilde, n_selected).

    Pairs are lexicographic by (i, j) with i < j. When the number of pairs
    among the selected predictions exceeds max_pairs, a seeded uniform
    subsample is taken (order preserved).
    """
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    mask = select(probs, cfg)
    chosen = np.flatnonzero(mask)
    s = chosen.size
    empty = (np.zeros(0, dtype=np.int64),) * 2 + (np.zeros(0),)
    if s < 2:
        return (*empty, s)
    ti, tj = np.triu_indices(s, k=1)
    ii = chosen[ti]
    jj = chosen[tj]
    if ii.size > max_pairs:
        if rng is None or isinstance(rng, (int, np.integer)):
            rng = np.random.default_rng(0 if rng is None else int(rng))
        keep = np.sort(rng.choice(ii.size, size=max_pairs, replace=False))
        ii = ii[keep]
        jj = jj[keep]
    c_tilde = np.clip(1.0 - _jsd_rows(probs, ii, jj, _plogp(probs)), 0.0, 1.0)
    return ii.astype(np.int64), jj.astype(np.int64), c_tilde, s


def make_pseudo_constraints(probs: np.ndarray, cfg: SelectionConfig,
                            max_pairs: int = 20000,
                            seed: int = 0) -> list[PseudoConstraint]:
    """Soft pseudo-constraints c = 1 - JSD over all selected prediction pairs.

    probs are the weak-branch predictions over the combined batch. Fewer than
    two selections give an empty list; s selections give s(s-1)/2 constraints
    (capped at max_pairs via a seeded subsample).
    """
    ii, jj, c_tilde, _ = pseudo_constraint_arrays(probs, cfg, max_pairs, seed)
    return [PseudoConstraint(int(i), int(j), float(c))
            for i, j, c in zip(ii, jj, c_tilde)]


def harden(pcs: list[PseudoConstraint], mu: float) -> list[PseudoConstraint]:
    """Threshold soft constraints into hard ones: c >= mu maps to 1, else 0."""
    if not 0.0 <= mu <= 1.0:
        raise ValueError("mu must lie in [0, 1]")
    return [PseudoConstraint(p.i, p.j, 1.0 if p.c_tilde >= mu else 0.0) for p in pcs]


def harden_targets(c_tilde: np.ndarray, mu: float) -> np.ndarray:
    if not 0.0 <= mu <= 1.0:
        raise ValueError("mu must lie in [0, 1]")
    return np.where(np.asarray(c_tilde) >= mu, 1.0, 0.0)


def _swap_top_two(probs: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Exchange the two largest entries of the flagged rows (copy).

    Ties resolve to the lowest indices, so flipping a row with equal top
    entries is a value-level no-op.
    """
    out = probs.copy()
    if rows.size == 0:
        return out
    order = np.argsort(-probs[rows], axis=1, kind="stable")
    top = order[:, 0]
    second = order[:, 1]
    out[rows, top], out[rows, second] = probs[rows, second], probs[rows, top]
    return out


def mode_flip_batch(probs: np.ndarray, rho: float,
                    rng: np.random.Generator) -> np.ndarray:
    """Apply the top-two swap independently to each row with probability rho."""
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    if probs.shape[1] < 2:
        raise ValueError("mode flip needs at least two clusters")
    if not 0.0 <= rho <= 1.0:
        raise ValueError("rho must lie in [0, 1]")
    triggered = rng.random(probs.shape[0]) < rho
    return _swap_top_two(probs, np.flatnonzero(triggered))


def mode_flip(y: np.ndarray, seed: int, rho: float) -> np.ndarray:
    """Swap the two largest predicted probabilities with probability rho.

    Simulates a confident confusion of the top two cluster assignments; the
    result is still a valid probability vector with the same entries.
    """
    y = np.asarray(y, dtype=np.float64)
    return mode_flip_batch(y.reshape(1, -1), rho, np.random.default_rng(seed))[0]
