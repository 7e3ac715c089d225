"""Measurements taken along GD and flow trajectories.

Breakeven detection, random projections of the weights, sharpness between
consecutive iterates, effective smoothness along the update direction, GD on
a frozen quadratic Taylor model, Gauss-Newton snapshots and Monte Carlo
estimates of the expected SGD loss change.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from eoslab.autodiff import Computation
from eoslab.optimize import TrainTrace
from eoslab.spectrum import TOL, gn_top_eig, top_eigs

PROJECTION_DIM = 64
BETWEEN_GRID = 8
SMOOTHNESS_GRID = 10
MC_SAMPLES = 100


@dataclass
class ProjectionBasis:
    """``k x P`` matrix of i.i.d. standard normals, reproducible from ``seed``."""

    dim: int
    k: int = PROJECTION_DIM
    seed: int = 0
    matrix: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.k < 1 or self.dim < 1:
            raise ValueError("projection needs k >= 1 and dim >= 1")
        self.matrix = np.random.default_rng(self.seed).standard_normal((self.k, self.dim))

    def project(self, theta) -> np.ndarray:
        return self.matrix @ np.asarray(theta, dtype=np.float64)


def detect_breakeven(trace: TrainTrace, mss_value: float) -> int | None:
    """Step of the first record whose sharpness is at least ``mss_value``."""
    for r in trace.records:
        if r.sharpness is not None and r.sharpness >= mss_value:
            return r.step
    return None


def detect_breakeven_time(trace: TrainTrace, mss_value: float) -> float | None:
    for r in trace.records:
        if r.sharpness is not None and r.sharpness >= mss_value:
            return r.time
    return None


def _time_key(t: float, resolution: float) -> int:
    return int(round(t / resolution))


def projected_points(trace: TrainTrace, resolution: float = 1e-9) -> dict:
    """Map from rounded time to projected parameters for every projected record."""
    out = {}
    for r in trace.records:
        if r.projection is not None:
            out.setdefault(_time_key(r.time, resolution), (r.time, r.projection))
    return out


def projected_distance(basis: ProjectionBasis | None, trace_a: TrainTrace, trace_b: TrainTrace,
                       resolution: float = 1e-9) -> list[tuple[float, float]]:
    """``(time, ||M theta_a(t) - M theta_b(t)||)`` at every time both traces projected.

    Times are matched after rounding to ``resolution``.  When ``basis`` is
    given, both traces must have been projected with its seed.
    """
    if basis is not None:
        for tr in (trace_a, trace_b):
            seed = tr.meta.get("projection_seed")
            if seed is not None and seed != basis.seed:
                raise ValueError(f"trace projected with seed {seed}, basis has seed {basis.seed}")
    pa = projected_points(trace_a, resolution)
    pb = projected_points(trace_b, resolution)
    common = sorted(set(pa) & set(pb))
    if not common:
        raise ValueError("traces share no projected time points")
    return [(pa[key][0], float(np.linalg.norm(pa[key][1] - pb[key][1]))) for key in common]


def path_length(trace: TrainTrace, until: float | None = None) -> np.ndarray:
    """Cumulative length of the projected polyline; entry ``i`` pairs with the i-th projected record."""
    pts = [(r.time, r.projection) for r in trace.records if r.projection is not None]
    if until is not None:
        pts = [p for p in pts if p[0] <= until]
    if not pts:
        return np.zeros(0)
    seg = [np.linalg.norm(b[1] - a[1]) for a, b in zip(pts, pts[1:])]
    return np.concatenate([[0.0], np.cumsum(seg)])


def between_iterate_sharpness(f: Computation, theta_a, theta_b, grid: int = BETWEEN_GRID,
                              tol: float = TOL, seed: int = 0) -> float:
    """Largest sharpness over ``grid`` evenly spaced interior points of the segment."""
    if grid < 1:
        raise ValueError("grid must be >= 1")
    a = np.asarray(theta_a, dtype=np.float64)
    b = np.asarray(theta_b, dtype=np.float64)
    best = -math.inf
    for j in range(1, grid + 1):
        # Weights are mirrored so swapping the endpoints visits the same points.
        point = ((grid + 1 - j) * a + j * b) / (grid + 1)
        best = max(best, top_eigs(f, point, 1, tol, seed=seed).top)
    return best


def effective_smoothness(f: Computation, theta, alpha: float, grid: int = SMOOTHNESS_GRID) -> float:
    """``max_j ||g - grad f(theta - gamma_j g)|| / ||gamma_j g||`` with ``gamma_j = j alpha / grid``."""
    if grid < 1 or not alpha > 0:
        raise ValueError("effective smoothness needs grid >= 1 and alpha > 0")
    theta = np.asarray(theta, dtype=np.float64)
    g = f.gradient(theta)
    gnorm = np.linalg.norm(g)
    if gnorm == 0.0:
        raise ValueError("effective smoothness is undefined at a zero gradient")
    best = -math.inf
    for j in range(1, grid + 1):
        gamma = j * alpha / grid
        ratio = np.linalg.norm(g - f.gradient(theta - gamma * g)) / (gamma * gnorm)
        best = max(best, float(ratio))
    return best


def taylor_probe(f: Computation, theta0, eta: float, steps: int) -> np.ndarray:
    """Losses of ``steps`` GD steps on the second-order Taylor model of ``f`` at ``theta0``.

    Returns ``steps + 1`` values, the first being ``f(theta0)``.  The Hessian
    is applied through ``f.hvp`` at the frozen point.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    theta0 = np.asarray(theta0, dtype=np.float64)
    f0, g0 = f.value_and_gradient(theta0)
    delta = np.zeros_like(theta0)
    h_delta = np.zeros_like(theta0)
    losses = [f0]
    for _ in range(steps):
        delta = delta - eta * (g0 + h_delta)
        h_delta = f.hvp(theta0, delta)
        losses.append(float(f0 + g0 @ delta + 0.5 * delta @ h_delta))
    return np.array(losses)


def taylor_probe_iterates(f: Computation, theta0, eta: float, steps: int) -> np.ndarray:
    """Iterates of the Taylor-model GD, written as ``theta0 + delta`` each step."""
    theta0 = np.asarray(theta0, dtype=np.float64)
    g0 = f.gradient(theta0)
    x = theta0.copy()
    xs = [x]
    for _ in range(steps):
        x = x - eta * (g0 + f.hvp(theta0, x - theta0))
        xs.append(x)
    return np.array(xs)


@dataclass
class GNSnapshot:
    hessian_top: float
    gn_top: float
    jtj_top: float
    margins: np.ndarray
    loss_hessian_scalars: np.ndarray


def gn_snapshot(f, theta, tol: float = TOL, seed: int = 0) -> GNSnapshot:
    """Hessian, Gauss-Newton and unweighted ``J^T J`` tops plus per-example margins."""
    if getattr(f, "loss", None) is None or f.loss.kind not in ("cross_entropy", "logistic"):
        raise ValueError("Gauss-Newton snapshots need cross_entropy or logistic loss")
    theta = np.asarray(theta, dtype=np.float64)
    return GNSnapshot(
        hessian_top=top_eigs(f, theta, 1, tol, seed=seed).top,
        gn_top=gn_top_eig(f, theta, "with_loss_hessian", tol, seed),
        jtj_top=gn_top_eig(f, theta, "without_loss_hessian", tol, seed),
        margins=f.margins(theta),
        loss_hessian_scalars=f.loss_hessian_scalars(theta),
    )


def expected_loss_change(f: Computation, theta, eta: float, batch_size: int,
                         n_samples: int = MC_SAMPLES, seed: int = 0) -> tuple[float, float]:
    """Monte Carlo mean and standard error of ``f(theta - eta g_B) - f(theta)``.

    Each sample draws ``batch_size`` distinct examples uniformly.  With a full
    batch every sample is identical and the standard error is 0.
    """
    n = f.n
    if not 1 <= batch_size <= n:
        raise ValueError(f"batch_size must lie in [1, {n}]")
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2")
    theta = np.asarray(theta, dtype=np.float64)
    if eta == 0:
        return 0.0, 0.0
    base = f.value(theta)
    if batch_size == n:
        delta = f.value(theta - eta * f.gradient(theta)) - base
        return float(delta), 0.0
    rng = np.random.default_rng(seed)
    deltas = np.empty(n_samples)
    for i in range(n_samples):
        batch = np.sort(rng.choice(n, size=batch_size, replace=False))
        g = f.subset(batch).gradient(theta)
        deltas[i] = f.value(theta - eta * g) - base
    return float(deltas.mean()), float(deltas.std(ddof=1) / math.sqrt(n_samples))
