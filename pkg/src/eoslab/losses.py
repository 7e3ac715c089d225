"""Per-example losses with first and second derivatives in the network output.

Three losses are supported:

* ``mse``: ``0.5 * sum_j (z[j] - y[j])**2`` with one-hot (or real) targets.
  There is no per-class averaging; the 1/2 factor is kept because the
  2/eta stability threshold is scale sensitive.
* ``cross_entropy``: ``-log softmax(z)[y]`` for integer labels.
* ``logistic``: ``log(1 + exp(-z*y))`` for a scalar score and labels in {-1, +1}.

The ``batch_*`` functions work on an ``(n, k)`` output matrix and the
canonical target array returned by :func:`prepare_targets`; they are what
the autodiff engine calls.  :func:`loss_eval` and :func:`margin` are the
single-example forms.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_softmax, softmax

LOSS_KINDS = ("mse", "cross_entropy", "logistic")


@dataclass(frozen=True)
class LossSpec:
    kind: str
    classes: int = 1

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}; expected one of {LOSS_KINDS}")
        if self.kind == "cross_entropy" and self.classes < 2:
            raise ValueError("cross_entropy needs classes >= 2")
        if self.classes < 1:
            raise ValueError("classes must be >= 1")

    @property
    def output_dim(self) -> int:
        return 1 if self.kind == "logistic" else self.classes


def prepare_targets(spec: LossSpec, y) -> np.ndarray:
    """Convert labels/targets into the canonical array used by the batch functions.

    mse accepts integer labels (one-hot encoded here) or an ``(n, k)`` real
    matrix; cross_entropy wants integer labels in ``[0, k)``; logistic wants
    labels in {-1, +1}.
    """
    y = np.asarray(y)
    if spec.kind == "mse":
        if np.issubdtype(y.dtype, np.integer) and y.ndim == 1:
            _check_labels(y, spec.classes)
            out = np.zeros((y.shape[0], spec.classes))
            out[np.arange(y.shape[0]), y] = 1.0
            return out
        out = np.asarray(y, dtype=np.float64)
        if out.ndim == 1:
            out = out[:, None]
        if out.shape[1] != spec.classes:
            raise ValueError(f"mse targets have {out.shape[1]} columns, loss expects {spec.classes}")
        return out
    if spec.kind == "cross_entropy":
        if not np.issubdtype(y.dtype, np.integer):
            if not np.all(np.equal(np.mod(y, 1), 0)):
                raise ValueError("cross_entropy labels must be integers")
            y = y.astype(np.int64)
        _check_labels(y.ravel(), spec.classes)
        return y.ravel().astype(np.int64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if not np.all((y == 1.0) | (y == -1.0)):
        raise ValueError("logistic labels must be -1 or +1")
    return y


def _check_labels(y: np.ndarray, k: int) -> None:
    if y.size and (y.min() < 0 or y.max() >= k):
        raise ValueError(f"label index out of range for {k} classes")


# --- batched forms -------------------------------------------------------

def batch_value(spec: LossSpec, z: np.ndarray, t: np.ndarray) -> np.ndarray:
    if spec.kind == "mse":
        r = z - t
        return 0.5 * np.einsum("ij,ij->i", r, r)
    if spec.kind == "cross_entropy":
        return -log_softmax(z, axis=1)[np.arange(z.shape[0]), t]
    return np.logaddexp(0.0, -z[:, 0] * t)


def batch_grad(spec: LossSpec, z: np.ndarray, t: np.ndarray) -> np.ndarray:
    if spec.kind == "mse":
        return z - t
    if spec.kind == "cross_entropy":
        g = softmax(z, axis=1)
        g[np.arange(z.shape[0]), t] -= 1.0
        return g
    # d/dz log(1 + exp(-zy)) = -y * sigmoid(-zy)
    return (-t * expit(-z[:, 0] * t))[:, None]


def batch_hess_apply(spec: LossSpec, z: np.ndarray, t: np.ndarray, dz: np.ndarray) -> np.ndarray:
    """Apply each example's output-space loss Hessian to the rows of ``dz``."""
    if spec.kind == "mse":
        return dz.copy()
    if spec.kind == "cross_entropy":
        p = softmax(z, axis=1)
        return p * dz - p * np.einsum("ij,ij->i", p, dz)[:, None]
    p = expit(z[:, 0] * t)
    return (p * (1.0 - p))[:, None] * dz


def batch_hess_scalars(spec: LossSpec, z: np.ndarray, t: np.ndarray) -> np.ndarray:
    """p_y(1 - p_y) for cross-entropy, p(1 - p) for logistic."""
    if spec.kind == "cross_entropy":
        py = softmax(z, axis=1)[np.arange(z.shape[0]), t]
        return py * (1.0 - py)
    if spec.kind == "logistic":
        p = expit(z[:, 0] * t)
        return p * (1.0 - p)
    raise ValueError("loss-Hessian scalars are defined for cross_entropy and logistic only")


def batch_margin(spec: LossSpec, z: np.ndarray, t: np.ndarray) -> np.ndarray:
    if spec.kind == "cross_entropy":
        rows = np.arange(z.shape[0])
        correct = z[rows, t]
        others = z.copy()
        others[rows, t] = -np.inf
        return correct - others.max(axis=1)
    if spec.kind == "logistic":
        return z[:, 0] * t
    raise ValueError("margin is undefined for mse")


def batch_correct(spec: LossSpec, z: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Boolean per-example correctness (mse uses the argmax of its one-hot target)."""
    if spec.kind == "logistic":
        return np.sign(z[:, 0]) == t
    if spec.kind == "cross_entropy":
        return np.argmax(z, axis=1) == t
    return np.argmax(z, axis=1) == np.argmax(t, axis=1)


# --- single example ----------------------------------------------------

def loss_eval(spec: LossSpec, z, y):
    """Return ``(value, grad_z, hess_z)`` for one example.

    >>> v, g, h = loss_eval(LossSpec("logistic"), 0.0, 1)
    >>> round(v, 6), float(h[0, 0])
    (0.693147, 0.25)
    """
    z = np.atleast_1d(np.asarray(z, dtype=np.float64))
    if not np.all(np.isfinite(z)):
        raise ValueError("loss_eval needs finite outputs")
    if z.shape[0] != spec.output_dim:
        raise ValueError(f"output has length {z.shape[0]}, loss expects {spec.output_dim}")
    t = prepare_targets(spec, _as_batch_label(spec, y))
    zb = z[None, :]
    k = spec.output_dim
    value = float(batch_value(spec, zb, t)[0])
    grad = batch_grad(spec, zb, t)[0]
    hess = batch_hess_apply(spec, np.repeat(zb, k, axis=0), np.repeat(t, k, axis=0), np.eye(k))
    return value, grad, hess


def margin(spec: LossSpec, z, y) -> float:
    z = np.atleast_1d(np.asarray(z, dtype=np.float64))
    t = prepare_targets(spec, _as_batch_label(spec, y))
    return float(batch_margin(spec, z[None, :], t)[0])


def _as_batch_label(spec: LossSpec, y):
    y = np.asarray(y)
    if spec.kind == "mse" and y.ndim == 1:
        return y[None, :]
    return y.reshape(1)
