"""The trainable cluster-assignment model: a small MLP ending in a softmax.

Forward maps feature vectors to probability vectors over n_out clusters.
Backward computes exact analytic parameter gradients given upstream gradients
on the output probabilities (the softmax Jacobian is applied here, so losses
only need d(loss)/d(probs)). Hidden layers use tanh, which keeps
finite-difference gradient checks clean.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


def softmax(logits: np.ndarray) -> np.ndarray:
    # max-subtraction keeps exp() in range for logits of any magnitude
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def is_valid_probs(p: np.ndarray, tol: float = 1e-9) -> bool:
    """True when every row of p is a probability vector within tol."""
    p = np.atleast_2d(np.asarray(p, dtype=np.float64))
    if np.any(p < 0) or np.any(p > 1):
        return False
    return bool(np.all(np.abs(p.sum(axis=-1) - 1.0) <= tol))


class ClusterHead:
    """Feedforward net: input d -> hidden widths -> n_out logits -> softmax."""

    def __init__(self, layer_dims, seed: int = 0):
        layer_dims = tuple(int(w) for w in layer_dims)
        if len(layer_dims) < 2 or any(w < 1 for w in layer_dims):
            raise ValueError("layer_dims needs at least input and output widths >= 1")
        self.layer_dims = layer_dims
        rng = np.random.default_rng(seed)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
            bound = 1.0 / math.sqrt(fan_in)
            self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.biases.append(rng.uniform(-bound, bound, size=fan_out))

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def n_out(self) -> int:
        return self.layer_dims[-1]

    def copy(self) -> "ClusterHead":
        clone = ClusterHead.__new__(ClusterHead)
        clone.layer_dims = self.layer_dims
        clone.weights = [w.copy() for w in self.weights]
        clone.biases = [b.copy() for b in self.biases]
        return clone

    def _activations(self, x: np.ndarray) -> list[np.ndarray]:
        # hidden-layer outputs, starting with the input itself
        hs = [x]
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            hs.append(np.tanh(hs[-1] @ w + b))
        return hs

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Softmax cluster-assignment probabilities for one vector or a batch."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        x = np.atleast_2d(x)
        if x.shape[1] != self.input_dim:
            raise ValueError(f"expected input dim {self.input_dim}, got {x.shape[1]}")
        hs = self._activations(x)
        logits = hs[-1] @ self.weights[-1] + self.biases[-1]
        probs = softmax(logits)
        return probs[0] if single else probs

    def backward(self, batch_inputs: np.ndarray, dprobs: np.ndarray):
        """Exact parameter gradients given upstream gradients on the probabilities.

        dprobs holds dL/dprobs, shape (batch, n_out); the softmax Jacobian and
        all layer gradients are applied analytically. Gradients are summed over
        the batch. Returns a list of (dW, db) matching self.weights / biases.
        """
        x = np.atleast_2d(np.asarray(batch_inputs, dtype=np.float64))
        g = np.atleast_2d(np.asarray(dprobs, dtype=np.float64))
        if x.shape[1] != self.input_dim:
            raise ValueError(f"expected input dim {self.input_dim}, got {x.shape[1]}")
        if g.shape != (x.shape[0], self.n_out):
            raise ValueError(f"upstream gradients must have shape {(x.shape[0], self.n_out)}")
        hs = self._activations(x)
        logits = hs[-1] @ self.weights[-1] + self.biases[-1]
        probs = softmax(logits)
        # softmax Jacobian: dL/dz_k = p_k (g_k - sum_l g_l p_l)
        dz = probs * (g - (g * probs).sum(axis=1, keepdims=True))
        grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(self.weights)
        for layer in range(len(self.weights) - 1, -1, -1):
            grads[layer] = (hs[layer].T @ dz, dz.sum(axis=0))
            if layer > 0:
                dh = dz @ self.weights[layer].T
                dz = dh * (1.0 - hs[layer] ** 2)  # tanh'
        return grads


def zero_grads(model: ClusterHead):
    return [(np.zeros_like(w), np.zeros_like(b))
            for w, b in zip(model.weights, model.biases)]


def add_grads(acc, extra):
    return [(aw + ew, ab + eb) for (aw, ab), (ew, eb) in zip(acc, extra)]


def scale_grads(grads, factor: float):
    return [(factor * w, factor * b) for w, b in grads]


@dataclass
class OptimizerState:
    """SGD state: momentum velocities plus the cosine learning-rate schedule.

    The learning rate at step t is eta * cos(7 pi t / (16 T)), t counted
    from 0, so lr(0) = eta and lr(T) ~ 0.195 eta; it stays positive and
    strictly decreasing over the whole run.
    """

    eta: float
    T: int
    momentum: float = 0.9
    weight_decay: float = 0.0
    t: int = 0
    velocities: list = field(default_factory=list)

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be at least 1")
        if not 0 <= self.t <= self.T:
            raise ValueError("t must lie in [0, T]")

    def learning_rate(self, t: int | None = None) -> float:
        t = self.t if t is None else t
        return self.eta * math.cos(7.0 * math.pi * t / (16.0 * self.T))


def init_optimizer(model: ClusterHead, eta: float, T: int,
                   momentum: float = 0.9, weight_decay: float = 0.0) -> OptimizerState:
    state = OptimizerState(eta=eta, T=T, momentum=momentum, weight_decay=weight_decay)
    state.velocities = zero_grads(model)
    return state


def sgd_step(model: ClusterHead, grads, opt: OptimizerState):
    """One SGD update with momentum and weight decay, in place.

    Weight decay applies to weights only, not biases. Raises once the
    schedule's T steps are exhausted.
    """
    if opt.t >= opt.T:
        raise RuntimeError(f"optimizer already performed its {opt.T} steps")
    lr = opt.learning_rate()
    for layer, (dw, db) in enumerate(grads):
        vw, vb = opt.velocities[layer]
        vw *= opt.momentum
        vw += dw + opt.weight_decay * model.weights[layer]
        vb *= opt.momentum
        vb += db
        model.weights[layer] -= lr * vw
        model.biases[layer] -= lr * vb
    opt.t += 1
    return model, opt


def predict_labels(model: ClusterHead, features: np.ndarray) -> np.ndarray:
    """Hard cluster ids: argmax of the forward probabilities."""
    probs = model.forward(np.atleast_2d(features))
    return probs.argmax(axis=1)


CHECKPOINT_MAGIC = b"cluster-head-checkpoint v1\n"


def save_checkpoint(path, model: ClusterHead, opt: OptimizerState | None = None) -> None:
    """Dump model (and optionally optimizer state) to a binary file.

    Layout: magic line, one JSON header line, then raw little-endian float64
    parameter bytes in row-major layer order (velocities appended when the
    optimizer is included). The format round-trips bit-exactly and rewriting
    the same state produces identical bytes.
    """
    import json

    header = {"layer_dims": list(model.layer_dims), "opt": None}
    if opt is not None:
        header["opt"] = {"eta": opt.eta, "momentum": opt.momentum,
                         "weight_decay": opt.weight_decay, "t": opt.t, "T": opt.T}
    arrays = []
    for w, b in zip(model.weights, model.biases):
        arrays.extend((w, b))
    if opt is not None:
        for vw, vb in opt.velocities:
            arrays.extend((vw, vb))
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode("ascii") + b"\n")
        for arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Load a checkpoint written by save_checkpoint; returns (model, opt-or-None)."""
    import json

    with open(path, "rb") as fh:
        if fh.readline() != CHECKPOINT_MAGIC:
            raise ValueError("not a cluster-head checkpoint")
        header = json.loads(fh.readline().decode("ascii"))
        dims = tuple(int(v) for v in header["layer_dims"])

        def read_array(shape):
            count = int(np.prod(shape))
            data = fh.read(count * 8)
            if len(data) != count * 8:
                raise ValueError("truncated checkpoint")
            return np.frombuffer(data, dtype="<f8").astype(np.float64).reshape(shape)

        model = ClusterHead.__new__(ClusterHead)
        model.layer_dims = dims
        model.weights = []
        model.biases = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            model.weights.append(read_array((fan_in, fan_out)))
            model.biases.append(read_array((fan_out,)))
        opt = None
        if header["opt"] is not None:
            meta = header["opt"]
            opt = OptimizerState(eta=meta["eta"], T=int(meta["T"]),
                                 momentum=meta["momentum"],
                                 weight_decay=meta["weight_decay"], t=int(meta["t"]))
            opt.velocities = []
            for fan_in, fan_out in zip(dims[:-1], dims[1:]):
                opt.velocities.append((read_array((fan_in, fan_out)),
                                       read_array((fan_out,))))
    return model, opt
