"""Matrix-free top eigenpairs of the Hessian and Gauss-Newton operators."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from eoslab.autodiff import Computation

MAX_ITER = 200
TOL = 1e-6
WEIGHTINGS = ("with_loss_hessian", "without_loss_hessian")


@dataclass
class SpectrumResult:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # (k, P), unit rows
    residuals: np.ndarray
    iterations: int
    converged: bool

    @property
    def top(self) -> float:
        return float(self.eigenvalues[0])


class ConvergenceWarning(UserWarning):
    pass


def lanczos(matvec, dim: int, k: int = 1, tol: float = TOL, max_iter: int = MAX_ITER,
            seed: int = 0, v0=None) -> SpectrumResult:
    """Largest-algebraic ``k`` eigenpairs of a symmetric operator.

    Lanczos with full reorthogonalization.  A Ritz pair counts as converged
    once its residual estimate ``|beta_j * s_last|`` is at most
    ``tol * max(1, |theta|)``.  On breakdown (an invariant subspace) the
    iteration restarts from a fresh random vector orthogonal to the basis,
    which recovers repeated eigenvalues; a breakdown is never taken as
    convergence on its own.  Returned residuals are recomputed
    with the operator; if the top ``k`` pairs do not converge within
    ``max_iter`` the result is flagged and a :class:`ConvergenceWarning` issued.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > dim:
        raise ValueError(f"k={k} exceeds operator dimension {dim}")
    rng = np.random.default_rng(seed)
    m_max = min(max_iter, dim)
    V = np.zeros((m_max, dim))
    alpha = np.zeros(m_max)
    beta = np.zeros(m_max)
    q = rng.standard_normal(dim) if v0 is None else np.array(v0, dtype=np.float64)
    q /= np.linalg.norm(q)
    converged = False
    m = 0
    theta = S = None
    scale = 0.0
    for j in range(m_max):
        V[j] = q
        w = matvec(q)
        alpha[j] = q @ w
        w = w - V[:j + 1].T @ (V[:j + 1] @ w)
        w = w - V[:j + 1].T @ (V[:j + 1] @ w)
        b = np.linalg.norm(w)
        m = j + 1
        scale = max(scale, abs(alpha[j]), b)
        T = np.diag(alpha[:m]) + np.diag(beta[:m - 1], 1) + np.diag(beta[:m - 1], -1)
        theta, S = np.linalg.eigh(T)
        breakdown = b <= 1e-12 * max(scale, 1e-300)
        if m >= k and not breakdown:
            top = slice(m - k, m)
            est = b * np.abs(S[-1, top])
            if np.all(est <= tol * np.maximum(1.0, np.abs(theta[top]))):
                converged = True
                break
        if m == m_max:
            break
        if breakdown:
            # Fresh direction orthogonal to the Krylov basis built so far.
            w = rng.standard_normal(dim)
            for _ in range(2):
                w -= V[:m].T @ (V[:m] @ w)
            beta[j] = 0.0
            q = w / np.linalg.norm(w)
        else:
            beta[j] = b
            q = w / b
    if m == dim:
        converged = True
    order = np.argsort(theta)[::-1][:k]
    vals = theta[order]
    vecs = (V[:m].T @ S[:, order]).T
    vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
    res = np.array([np.linalg.norm(matvec(v) - lam * v) for lam, v in zip(vals, vecs)])
    if not converged:
        warnings.warn(f"Lanczos did not converge in {m} iterations (residuals {res})",
                      ConvergenceWarning, stacklevel=2)
    return SpectrumResult(vals, vecs, res, m, converged)


def top_eigs(f: Computation, theta, k: int = 1, tol: float = TOL, max_iter: int = MAX_ITER,
             seed: int = 0) -> SpectrumResult:
    """Top-``k`` Hessian eigenpairs of ``f`` at ``theta`` via Hessian-vector products."""
    theta = np.asarray(theta, dtype=np.float64)
    f.check(theta)
    return lanczos(lambda v: f.hvp(theta, v), f.dim, k, tol, max_iter, seed)


def sharpness(f: Computation, theta, tol: float = TOL, seed: int = 0) -> float:
    return top_eigs(f, theta, 1, tol, seed=seed).top


def gn_operator(f, theta, weighting: str = "with_loss_hessian"):
    if weighting not in WEIGHTINGS:
        raise ValueError(f"unknown weighting {weighting!r}")
    if not hasattr(f, "gn_product"):
        raise ValueError("Gauss-Newton products need a network objective")
    theta = np.asarray(theta, dtype=np.float64)
    weighted = weighting == "with_loss_hessian"
    return lambda v: f.gn_product(theta, v, weighted)


def gn_top_eig(f, theta, weighting: str = "with_loss_hessian", tol: float = TOL,
               seed: int = 0) -> float:
    """Leading eigenvalue of ``(1/n) sum_i J_i^T W_i J_i``.

    ``W_i`` is the output-space loss Hessian (``with_loss_hessian``) or the
    identity (``without_loss_hessian``).  ``f`` is a network objective from
    :func:`eoslab.models.build_computation`.
    """
    if getattr(f, "loss", None) is None or f.loss.kind not in ("mse", "cross_entropy", "logistic"):
        raise ValueError("unsupported loss for Gauss-Newton eigenvalue")
    op = gn_operator(f, theta, weighting)
    return lanczos(op, f.dim, 1, tol, seed=seed).top
