"""Training loops for the four regimes.

constraintmatch: every step draws a constrained pair batch (with replacement)
and an unconstrained batch (cycling a reshuffled permutation). The constrained
branch scores weakly augmented pair members with the pairwise loss. After a
constrained-only warmup, the pseudo branch kicks in: weak-branch predictions
over the combined batch (both constrained members plus the unconstrained
batch) are filtered by the selection criterion and mapped to soft pairwise
pseudo-constraints, which act as fixed targets for predictions over strongly
augmented versions of the same samples. One SGD step per training step on
loss_cons + lam * loss_pseudo.

constrained / fully_constrained: the constrained branch only (the latter
expects a dense constraint set mined by the caller).

naive_pl: FixMatch-style baseline; confident weak-branch predictions over the
unconstrained batch become hard argmax pseudo-labels for a cross-entropy term
on the strong branch.

Each random concern (constraint batches, unconstrained cycling, weak/strong
augmentation, prediction noise, pair subsampling) draws from its own named
stream, so regimes that share a seed see identical draws for the concerns
they share; with lam = 0 the constraintmatch trajectory reduces exactly to
the constrained one.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .data import (AugmentationPolicy, ConstraintPair, Dataset, NoiseConfig,
                   _augment_batch, default_policy)
from .losses import _mcl_arrays, cross_entropy_loss
from .network import (ClusterHead, add_grads, init_optimizer, predict_labels,
                      sgd_step)
from .pseudo import (SelectionConfig, harden_targets, mode_flip_batch,
                     pseudo_constraint_arrays)
from .seeds import derive_seed, stream_rng

REGIMES = ("constraintmatch", "constrained", "naive_pl", "fully_constrained")


class TrainingDiverged(RuntimeError):
    """A loss became non-finite; carries a diagnostic state snapshot."""

    def __init__(self, message: str, state: dict):
        super().__init__(f"{message}; state: {json.dumps(state, default=str)}")
        self.state = state


@dataclass
class TrainConfig:
    """Everything one training run needs besides the data and constraints."""

    regime: str = "constraintmatch"
    n_out: int | None = None          # defaults to the dataset's K
    hidden_dims: tuple[int, ...] = (64, 64)
    batch_c: int = 64
    batch_u: int = 192
    lam: float = 1.0
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    soft_pc: bool = True
    mu: float = 0.5
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    eta: float = 0.1
    T: int = 2000
    momentum: float = 0.9
    weight_decay: float = 1e-4
    warmup_steps: int = 200
    augmentation: AugmentationPolicy | None = None   # None: default_policy(ds)
    max_pseudo_pairs: int = 20000
    seed: int = 0

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValueError(f"regime must be one of {REGIMES}")
        if self.batch_c < 1 or self.batch_u < 1:
            raise ValueError("batch sizes must be at least 1")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if not 0 <= self.warmup_steps <= self.T:
            raise ValueError("warmup_steps must lie in [0, T]")
        if not 0.0 <= self.mu <= 1.0:
            raise ValueError("mu must lie in [0, 1]")


@dataclass
class StepRecord:
    t: int
    lr: float
    loss_cons: float
    loss_pseudo: float
    sel_frac: float
    pml_frac: float


@dataclass
class TrainTrace:
    """Per-step log of one run plus the final checkpoint reference."""

    records: list[StepRecord] = field(default_factory=list)
    checkpoint_path: str | None = None

    def to_jsonl(self) -> str:
        lines = []
        for r in self.records:
            lines.append(json.dumps({
                "t": r.t, "lr": r.lr, "loss_cons": r.loss_cons,
                "loss_pseudo": r.loss_pseudo, "sel_frac": r.sel_frac,
                "pml_frac": r.pml_frac,
            }))
        return "\n".join(lines) + ("\n" if lines else "")

    def write_jsonl(self, path) -> None:
        with open(path, "w", newline="\n") as fh:
            fh.write(self.to_jsonl())

    @classmethod
    def read_jsonl(cls, path) -> "TrainTrace":
        records = []
        with open(path) as fh:
            for line in fh:
                if line.strip():
                    d = json.loads(line)
                    records.append(StepRecord(**d))
        return cls(records=records)


class _EpochCycler:
    """Without-replacement batch cycling with a reshuffle at each epoch end."""

    def __init__(self, n: int, rng: np.random.Generator):
        self.n = n
        self.rng = rng
        self.order = rng.permutation(n)
        self.pos = 0

    def take(self, m: int) -> np.ndarray:
        chunks = []
        while m > 0:
            if self.pos == self.n:
                self.order = self.rng.permutation(self.n)
                self.pos = 0
            grab = min(m, self.n - self.pos)
            chunks.append(self.order[self.pos:self.pos + grab])
            self.pos += grab
            m -= grab
        return np.concatenate(chunks) if len(chunks) > 1 else chunks[0]


def apply_pseudo_noise(weak_probs: np.ndarray, noise: NoiseConfig,
                       rng: np.random.Generator | int | None = None) -> np.ndarray:
    """Mode-flip each unconstrained prediction with probability rho.

    Runs before selection and pseudo-constraint or pseudo-label generation.
    """
    if rng is None or isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(noise.seed if rng is None else int(rng))
    return mode_flip_batch(weak_probs, noise.pseudo_flip_fraction, rng)


def _check_finite(t: int, loss_cons: float, loss_pseudo: float, lr: float):
    if not (math.isfinite(loss_cons) and math.isfinite(loss_pseudo)):
        raise TrainingDiverged(
            "non-finite loss encountered",
            {"t": t, "loss_cons": loss_cons, "loss_pseudo": loss_pseudo, "lr": lr})


class _RunState:
    """Shared scaffolding for the training loops."""

    def __init__(self, ds_train: Dataset, constraints: list[ConstraintPair],
                 cfg: TrainConfig):
        feats = ds_train.features
        self.feats = feats
        self.cfg = cfg
        n_out = cfg.n_out if cfg.n_out is not None else ds_train.K
        if n_out is None:
            raise ValueError("n_out unspecified and the dataset is unlabeled")
        self.n_out = int(n_out)
        self.policy = cfg.augmentation or default_policy(feats)
        self.model = ClusterHead((ds_train.d, *cfg.hidden_dims, self.n_out),
                                 seed=derive_seed(cfg.seed, "init"))
        self.opt = init_optimizer(self.model, eta=cfg.eta, T=cfg.T,
                                  momentum=cfg.momentum,
                                  weight_decay=cfg.weight_decay)
        for p in constraints:
            if not (0 <= p.i < ds_train.n and 0 <= p.j < ds_train.n):
                raise ValueError(f"constraint ({p.i}, {p.j}) indexes outside the dataset")
        self.ci = np.asarray([p.i for p in constraints], dtype=np.int64)
        self.cj = np.asarray([p.j for p in constraints], dtype=np.int64)
        self.cc = np.asarray([p.c for p in constraints], dtype=np.float64)
        # one named stream per random concern
        self.rng_bc = stream_rng(cfg.seed, "batch-cons")
        self.rng_bu = stream_rng(cfg.seed, "batch-uncons")
        self.rng_weak_c = stream_rng(cfg.seed, "weak-cons")
        self.rng_weak_u = stream_rng(cfg.seed, "weak-uncons")
        self.rng_strong = stream_rng(cfg.seed, "strong")
        self.rng_noise = stream_rng(cfg.seed, "pred-noise")
        self.rng_pairs = stream_rng(cfg.seed, "pair-subsample")
        self.cycler = _EpochCycler(ds_train.n, self.rng_bu)
        self.trace = TrainTrace()

    def constrained_step(self):
        """Weak-augment a constrained pair batch, returns losses and grads."""
        cfg = self.cfg
        if self.ci.size == 0:
            zeros = (np.zeros((0, self.feats.shape[1])),) * 2
            return 0.0, zeros[0], zeros[1], None, None
        idx = self.rng_bc.integers(0, self.ci.size, size=cfg.batch_c)
        xi = self.feats[self.ci[idx]]
        xj = self.feats[self.cj[idx]]
        xi_w = _augment_batch(xi, self.policy, "weak", self.rng_weak_c)
        xj_w = _augment_batch(xj, self.policy, "weak", self.rng_weak_c)
        pi = self.model.forward(xi_w)
        pj = self.model.forward(xj_w)
        loss, gl, gr = _mcl_arrays(pi, pj, self.cc[idx])
        grads = self.model.backward(np.vstack((xi_w, xj_w)), np.vstack((gl, gr)))
        return loss, xi, xj, (pi, pj), grads

    def unconstrained_batch(self):
        """Raw unconstrained samples plus their noised weak-branch predictions."""
        u_idx = self.cycler.take(self.cfg.batch_u)
        xu = self.feats[u_idx]
        xu_w = _augment_batch(xu, self.policy, "weak", self.rng_weak_u)
        pu = self.model.forward(xu_w)
        pu = apply_pseudo_noise(pu, self.cfg.noise, self.rng_noise)
        return u_idx, xu, pu

    def record(self, lr, loss_cons, loss_pseudo, sel_frac, pml_frac):
        t = len(self.trace.records)
        _check_finite(t, loss_cons, loss_pseudo, lr)
        self.trace.records.append(StepRecord(
            t=t, lr=lr, loss_cons=float(loss_cons), loss_pseudo=float(loss_pseudo),
            sel_frac=float(sel_frac), pml_frac=float(pml_frac)))


def train(ds_train: Dataset, constraints: list[ConstraintPair],
          cfg: TrainConfig) -> tuple[ClusterHead, TrainTrace]:
    """Run one training regime to completion; deterministic per cfg.seed.

    Dispatches naive_pl to train_naive_pl. The fully_constrained regime runs
    the constrained branch only and expects the caller to pass a dense
    constraint set.
    """
    if cfg.regime == "naive_pl":
        return train_naive_pl(ds_train, constraints, cfg)
    state = _RunState(ds_train, constraints, cfg)
    use_pseudo = cfg.regime == "constraintmatch"
    for step in range(cfg.T):
        lr = state.opt.learning_rate()
        loss_c, xi, xj, cons_probs, grads = state.constrained_step()
        loss_p, sel_frac, pml_frac = 0.0, 0.0, 0.0
        if use_pseudo and step >= cfg.warmup_steps:
            _, xu, pu = state.unconstrained_batch()
            if cons_probs is not None:
                weak_b = np.vstack((cons_probs[0], cons_probs[1], pu))
                raw_b = np.vstack((xi, xj, xu))
            else:
                weak_b = pu
                raw_b = xu
            ii, jj, targets, n_sel = pseudo_constraint_arrays(
                weak_b, cfg.selection, cfg.max_pseudo_pairs, state.rng_pairs)
            if not cfg.soft_pc:
                targets = harden_targets(targets, cfg.mu)
            sel_frac = n_sel / weak_b.shape[0]
            pml_frac = float(np.mean(targets >= 0.5)) if targets.size else 0.0
            x_strong = _augment_batch(raw_b, state.policy, "strong", state.rng_strong)
            ps = state.model.forward(x_strong)
            loss_p, gl, gr = _mcl_arrays(ps[ii], ps[jj], targets)
            dps = np.zeros_like(ps)
            _scatter_rows(dps, ii, gl)
            _scatter_rows(dps, jj, gr)
            pseudo_grads = state.model.backward(x_strong, cfg.lam * dps)
            grads = pseudo_grads if grads is None else add_grads(grads, pseudo_grads)
        state.record(lr, loss_c, loss_p, sel_frac, pml_frac)
        if grads is not None:
            sgd_step(state.model, grads, state.opt)
        else:
            state.opt.t += 1  # nothing to optimize this step
    return state.model, state.trace


def train_naive_pl(ds_train: Dataset, constraints: list[ConstraintPair],
                   cfg: TrainConfig) -> tuple[ClusterHead, TrainTrace]:
    """The naive pseudo-labeling baseline.

    Unconstrained weak-branch predictions passing the confidence threshold
    become hard argmax pseudo-labels; strong-branch predictions on the same
    samples enter a cross-entropy term weighted by lam next to the
    constrained loss.
    """
    if cfg.regime != "naive_pl":
        cfg = replace(cfg, regime="naive_pl")
    if cfg.selection.mode != "confidence":
        raise ValueError("naive_pl requires confidence-based selection")
    state = _RunState(ds_train, constraints, cfg)
    for step in range(cfg.T):
        lr = state.opt.learning_rate()
        loss_c, xi, xj, cons_probs, grads = state.constrained_step()
        loss_p, sel_frac = 0.0, 0.0
        if step >= cfg.warmup_steps:
            _, xu, pu = state.unconstrained_batch()
            mask = pu.max(axis=1) > cfg.selection.tau
            sel_frac = float(mask.mean())
            x_strong = _augment_batch(xu, state.policy, "strong", state.rng_strong)
            ps = state.model.forward(x_strong)
            if mask.any():
                labels = pu[mask].argmax(axis=1)
                loss_p, grad_sel = cross_entropy_loss(ps[mask], labels)
                dps = np.zeros_like(ps)
                dps[mask] = grad_sel
                pseudo_grads = state.model.backward(x_strong, cfg.lam * dps)
                grads = pseudo_grads if grads is None else add_grads(grads, pseudo_grads)
        state.record(lr, loss_c, loss_p, sel_frac, 0.0)
        if grads is not None:
            sgd_step(state.model, grads, state.opt)
        else:
            state.opt.t += 1
    return state.model, state.trace


def _scatter_rows(out: np.ndarray, idx: np.ndarray, rows: np.ndarray) -> None:
    """out[idx] += rows with repeated indices accumulated (bincount per column)."""
    if idx.size == 0:
        return
    n = out.shape[0]
    for col in range(out.shape[1]):
        out[:, col] += np.bincount(idx, weights=rows[:, col], minlength=n)


def validation_constraint_loss(model: ClusterHead, ds: Dataset,
                               constraints: list[ConstraintPair]) -> float:
    """Constrained loss of a model on held-out constraints, no augmentation."""
    if not constraints:
        raise ValueError("no validation constraints given")
    ci = np.asarray([p.i for p in constraints])
    cj = np.asarray([p.j for p in constraints])
    cc = np.asarray([p.c for p in constraints], dtype=np.float64)
    pi = model.forward(ds.features[ci])
    pj = model.forward(ds.features[cj])
    loss, _, _ = _mcl_arrays(pi, pj, cc)
    return float(loss)


def pseudo_label_accuracy(model: ClusterHead, ds: Dataset,
                          noise: NoiseConfig, selection: SelectionConfig,
                          seed: int = 0) -> float:
    """Accuracy of argmax pseudo-labels after noise, over selected samples.

    Diagnostic used in the noise studies; returns NaN when nothing is
    selected. Labels are compared through the best cluster-to-class mapping
    of the clean predictions, so the number reflects flip damage rather than
    cluster naming.
    """
    from .evaluation import evaluate  # local import to avoid a cycle

    if ds.labels is None:
        raise ValueError("needs a labeled dataset")
    probs = model.forward(ds.features)
    report = evaluate(probs.argmax(axis=1), ds.labels, K=ds.K,
                      n_out=probs.shape[1])
    noised = apply_pseudo_noise(probs, noise, stream_rng(seed, "pl-acc"))
    from .pseudo import select as _select
    mask = _select(noised, selection)
    if not mask.any():
        return float("nan")
    assigned = noised[mask].argmax(axis=1)
    mapped = np.asarray([report.mapping.get(int(c), -1) for c in assigned])
    return float(np.mean(mapped == ds.labels[mask]))
