"""Gradient descent and its momentum variants on quadratic objectives.

On ``f(x) = 1/2 x^T A x + b^T x + c`` all three algorithms act independently
along each eigenvector of ``A``, so stability is decided eigenvalue by
eigenvalue against the maximum stable sharpness (MSS):

    gd        2 / eta
    polyak    (2 + 2 beta) / eta
    nesterov  (2 + 2 beta) / (eta (1 + 2 beta))
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from eoslab.autodiff import Computation

ALGORITHMS = ("gd", "polyak", "nesterov")
DIVERGENCE_THRESHOLD = 1e12


@dataclass(frozen=True)
class QuadraticSpec:
    eigenvalues: tuple
    basis: np.ndarray | None = None
    linear: np.ndarray | None = None
    constant: float = 0.0

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.eigenvalues, dtype=np.float64))
        object.__setattr__(self, "eigenvalues", a)
        d = a.shape[0]
        if self.basis is not None:
            Q = np.asarray(self.basis, dtype=np.float64)
            if Q.shape != (d, d):
                raise ValueError(f"basis must be {d}x{d}")
            if np.max(np.abs(Q.T @ Q - np.eye(d))) > 1e-10:
                raise ValueError("basis is not orthonormal (Q^T Q != I within 1e-10)")
            object.__setattr__(self, "basis", Q)
        b = np.zeros(d) if self.linear is None else np.asarray(self.linear, dtype=np.float64)
        if b.shape != (d,):
            raise ValueError(f"linear term must have length {d}")
        object.__setattr__(self, "linear", b)

    @property
    def dim(self) -> int:
        return self.eigenvalues.shape[0]

    @property
    def Q(self) -> np.ndarray:
        return np.eye(self.dim) if self.basis is None else self.basis

    @property
    def A(self) -> np.ndarray:
        if self.basis is None:
            return np.diag(self.eigenvalues)
        Q = self.basis
        return (Q * self.eigenvalues) @ Q.T

    def minimizer(self) -> np.ndarray:
        return -np.linalg.solve(self.A, self.linear)


class QuadraticObjective(Computation):
    def __init__(self, spec: QuadraticSpec):
        self.spec = spec
        self.A = spec.A
        self.b = spec.linear
        self.c = float(spec.constant)
        self.dim = spec.dim

    def value(self, theta) -> float:
        return float(0.5 * theta @ (self.A @ theta) + self.b @ theta + self.c)

    def gradient(self, theta) -> np.ndarray:
        return self.A @ theta + self.b

    def hvp(self, theta, v) -> np.ndarray:
        return self.A @ v


def mss(alg: str, eta: float, beta: float = 0.0) -> float:
    """Maximum stable sharpness of ``alg`` at step size ``eta`` and momentum ``beta``."""
    if alg not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {alg!r}")
    if eta <= 0:
        raise ValueError("eta must be positive")
    if not 0.0 <= beta < 1.0:
        raise ValueError("beta must lie in [0, 1)")
    if alg == "gd":
        if beta != 0.0:
            raise ValueError("gd has no momentum (beta must be 0)")
        return 2.0 / eta
    if alg == "polyak":
        return (2.0 + 2.0 * beta) / eta
    return (2.0 + 2.0 * beta) / (eta * (1.0 + 2.0 * beta))


def closed_form_gd(a: float, eta: float, x0: float, x_star: float, t: int) -> float:
    """``x_t = (1 - eta a)^t (x0 - x*) + x*`` for 1-d gradient descent."""
    return (1.0 - eta * a) ** t * (x0 - x_star) + x_star


def classify_stability(alg: str, spec: QuadraticSpec, eta: float, beta: float = 0.0) -> list[str]:
    """Per-eigenvalue verdict; negative curvature diverges at any positive step size."""
    limit = mss(alg, eta, beta)
    return ["divergent" if (a > limit or a < 0) else "stable" for a in spec.eigenvalues]


@dataclass
class Simulation:
    iterates: np.ndarray
    coords: np.ndarray
    diverged: bool
    diverged_at: int | None

    @property
    def steps(self) -> int:
        return self.iterates.shape[0] - 1


def simulate(alg: str, spec: QuadraticSpec, eta: float, beta: float, x0, steps: int,
             threshold: float = DIVERGENCE_THRESHOLD) -> Simulation:
    """Run ``steps`` iterations with zero initial velocity, recording eigenbasis coordinates.

    Stops early (flagging divergence) once any coordinate exceeds ``threshold``
    in magnitude or stops being finite.
    """
    mss(alg, eta, beta)
    f = QuadraticObjective(spec)
    x = np.array(x0, dtype=np.float64)
    f.check(x)
    Q = spec.Q
    v = np.zeros_like(x)
    xs = [x.copy()]
    diverged_at = None
    for t in range(1, steps + 1):
        if alg == "gd":
            x = x - eta * f.gradient(x)
        elif alg == "polyak":
            v = beta * v - eta * f.gradient(x)
            x = x + v
        else:
            v = beta * v - eta * f.gradient(x + beta * v)
            x = x + v
        xs.append(x)
        c = Q.T @ x
        if not np.all(np.abs(c) <= threshold):
            diverged_at = t
            break
    iterates = np.array(xs)
    return Simulation(iterates, iterates @ Q, diverged_at is not None, diverged_at)


def boundary_check(alg: str, eta: float, beta: float, margin: float = 1e-3,
                   stable_steps: int = 10_000, divergent_steps: int = 100_000) -> dict:
    """Probe one eigenvalue just below and just above the MSS.

    Below: the single coordinate must stay under the divergence threshold for
    ``stable_steps``.  Above: it must trip the threshold within ``divergent_steps``.
    """
    limit = mss(alg, eta, beta)
    below = simulate(alg, QuadraticSpec((limit * (1 - margin),)), eta, beta, [1.0], stable_steps)
    above = simulate(alg, QuadraticSpec((limit * (1 + margin),)), eta, beta, [1.0], divergent_steps)
    return {
        "alg": alg, "eta": eta, "beta": beta, "mss": limit,
        "bounded_below": not below.diverged,
        "max_abs_below": float(np.max(np.abs(below.coords))),
        "diverged_above": above.diverged,
        "steps_to_diverge": above.diverged_at,
    }
