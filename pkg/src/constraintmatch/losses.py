"""Pairwise constraint losses over softmax cluster-assignment vectors.

The alignment score of two probability vectors is their inner product: the
probability both samples land in the same cluster. The pairwise loss is binary
cross-entropy of that score against the (possibly soft) constraint target.
All functions return exact analytic gradients with respect to the probability
vectors; target values never receive gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# alignment scores are clamped to [EPS, 1 - EPS] before the log
EPS = 1e-7


@dataclass
class PairBatch:
    """A batch of (left, right, target) probability-vector pairs.

    left/right: (P, n_out) matrices, one probability vector per row.
    targets: (P,) constraint values in [0, 1]; hard constraints are 0 or 1.
    lam: loss weight applied when this batch feeds the pseudo term.
    """

    left: np.ndarray
    right: np.ndarray
    targets: np.ndarray
    lam: float = 1.0

    def __post_init__(self):
        self.left = np.atleast_2d(np.asarray(self.left, dtype=np.float64))
        self.right = np.atleast_2d(np.asarray(self.right, dtype=np.float64))
        self.targets = np.atleast_1d(np.asarray(self.targets, dtype=np.float64))
        if self.left.shape != self.right.shape:
            raise ValueError("left and right must have identical shapes")
        if self.targets.shape != (self.left.shape[0],):
            raise ValueError("one target per pair required")
        if self.targets.size and (self.targets.min() < 0 or self.targets.max() > 1):
            raise ValueError("targets must lie in [0, 1]")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")

    @classmethod
    def empty(cls, n_out: int, lam: float = 1.0) -> "PairBatch":
        return cls(left=np.zeros((0, n_out)), right=np.zeros((0, n_out)),
                   targets=np.zeros(0), lam=lam)

    def __len__(self) -> int:
        return self.left.shape[0]


def alignment(y_i: np.ndarray, y_j: np.ndarray) -> float:
    """Inner product of two probability vectors: the same-cluster score."""
    y_i = np.asarray(y_i, dtype=np.float64)
    y_j = np.asarray(y_j, dtype=np.float64)
    if y_i.shape != y_j.shape:
        raise ValueError("probability vectors must have equal length")
    return float(y_i @ y_j)


def _mcl_arrays(left: np.ndarray, right: np.ndarray, targets: np.ndarray):
    """Mean binary cross-entropy of pairwise alignment scores, with gradients.

    Returns (loss, dloss/dleft, dloss/dright). Scores are clamped to
    [EPS, 1 - EPS]; the gradients are exact for the clamped function, i.e.
    zero wherever the clamp is active. An empty batch gives loss 0.
    """
    n_pairs = left.shape[0]
    if n_pairs == 0:
        return 0.0, np.zeros_like(left), np.zeros_like(right)
    raw = np.einsum("ij,ij->i", left, right)
    c_hat = np.clip(raw, EPS, 1.0 - EPS)
    loss = -np.mean(targets * np.log(c_hat) + (1.0 - targets) * np.log1p(-c_hat))
    dlds = -(targets / c_hat - (1.0 - targets) / (1.0 - c_hat)) / n_pairs
    dlds = np.where((raw > EPS) & (raw < 1.0 - EPS), dlds, 0.0)
    return float(loss), dlds[:, None] * right, dlds[:, None] * left


def mcl_loss(batch: PairBatch):
    """Pairwise constraint loss for one batch: (loss, grad_left, grad_right)."""
    return _mcl_arrays(batch.left, batch.right, batch.targets)


def combined_loss(constrained: PairBatch, pseudo: PairBatch, lam: float):
    """Constrained loss plus lam times the pseudo-constraint loss.

    Returns (loss, (grad_left_cons, grad_right_cons),
    (grad_left_pseudo, grad_right_pseudo)); the pseudo gradients already carry
    the factor lam.
    """
    if lam < 0:
        raise ValueError("lam must be non-negative")
    loss_c, gl_c, gr_c = mcl_loss(constrained)
    loss_p, gl_p, gr_p = mcl_loss(pseudo)
    total = loss_c + lam * loss_p
    return float(total), (gl_c, gr_c), (lam * gl_p, lam * gr_p)


def cross_entropy_loss(probs: np.ndarray, labels: np.ndarray):
    """Mean -log p[label] over a batch, with gradients on the probabilities.

    Used by the naive pseudo-labeling baseline's auxiliary loss. Probabilities
    are clamped below at EPS; gradients are exact for the clamped function.
    Empty batches give loss 0.
    """
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    m = probs.shape[0]
    if m == 0:
        return 0.0, np.zeros_like(probs)
    if labels.shape != (m,):
        raise ValueError("one label per row required")
    picked = probs[np.arange(m), labels]
    clamped = np.maximum(picked, EPS)
    loss = float(-np.mean(np.log(clamped)))
    grad = np.zeros_like(probs)
    live = picked > EPS
    grad[np.arange(m)[live], labels[live]] = -1.0 / (m * picked[live])
    return loss, grad
