"""Gradient flow ``dtheta/dt = -grad f(theta)`` integrated with classical RK4.

The step size follows the most recent sharpness, ``h = alpha / lambda``,
instead of an error-controlled scheme.  The sharpness is refreshed every
``refresh_every`` RK steps and at every save point, and ``h`` may at most
double between refreshes.  Steps are shortened to land exactly on the save
grid so flow traces can be compared with GD at step ``t / eta``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from eoslab.autodiff import Computation
from eoslab.optimize import Record, TrainState, TrainTrace, evaluate_with_gradient
from eoslab.spectrum import TOL, top_eigs

NONSMOOTH = ("relu", "hardtanh")


@dataclass(frozen=True)
class FlowConfig:
    alpha: float = 0.5
    refresh_every: int = 20
    save_every: float = 1.0
    max_time: float = 100.0
    target_loss: float | None = None
    target_accuracy: float | None = None
    max_steps: int = 10_000_000
    top_k: int = 1
    lanczos_seed: int = 0
    lanczos_tol: float = TOL

    def __post_init__(self):
        if not 0.0 < self.alpha < 2.0:
            raise ValueError("alpha must lie in (0, 2)")
        if self.refresh_every < 1 or not self.save_every > 0 or not self.max_time > 0:
            raise ValueError("refresh_every, save_every and max_time must be positive")


def rk4_step(f: Computation, theta, h: float, k1=None) -> np.ndarray:
    """One classical RK4 step of ``dtheta/dt = -grad f``.  ``k1`` may be passed if known."""
    if not h > 0:
        raise ValueError("RK4 step needs h > 0")
    if k1 is None:
        k1 = -f.gradient(theta)
    k2 = -f.gradient(theta + 0.5 * h * k1)
    k3 = -f.gradient(theta + 0.5 * h * k2)
    k4 = -f.gradient(theta + h * k3)
    return theta + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate_fixed(f: Computation, theta0, h: float, steps: int) -> np.ndarray:
    theta = np.array(theta0, dtype=np.float64)
    for _ in range(steps):
        theta = rk4_step(f, theta, h)
    return theta


def integrate_flow(f: Computation, theta0, cfg: FlowConfig = FlowConfig(), *,
                   projection=None, diagnostics=(), callback=None) -> TrainTrace:
    """Integrate gradient flow from ``theta0`` and return a time-indexed trace.

    Records are written at ``t = 0``, at every multiple of ``cfg.save_every``
    and at the stopping time.  Each record carries the loss, accuracy,
    sharpness and (if ``projection`` is given) the projected parameters.
    ``diagnostics`` entries ``(name, fn)`` with ``fn(f, state) -> float`` are
    evaluated at every save.  Runs on ReLU/hardtanh networks are labelled
    ``runge_kutta`` because their flow need not exist.
    """
    label = "runge_kutta" if getattr(f, "activation", None) in NONSMOOTH else "gradient_flow"
    trace = TrainTrace(label=label, meta={"alpha": cfg.alpha, "save_every": cfg.save_every})
    if projection is not None:
        trace.meta["projection_seed"] = projection.seed
    theta = np.array(theta0, dtype=np.float64)
    f.check(theta)
    t = 0.0
    n_steps = 0
    next_save = 1
    h_nominal = None
    since_refresh = 0

    def sharp(th):
        return top_eigs(f, th, cfg.top_k, cfg.lanczos_tol, seed=cfg.lanczos_seed)

    def record(th, time, loss, acc, res=None):
        rec = Record(n_steps, time, math.nan, loss, acc)
        if res is not None:
            rec.sharpness = float(res.eigenvalues[0])
            rec.eigs = tuple(float(e) for e in res.eigenvalues)
        if projection is not None:
            rec.projection = projection.project(th)
        trace.records.append(rec)
        state = TrainState(th, np.zeros(0), n_steps, time)
        for name, fn in diagnostics:
            trace.diagnostics.append((n_steps, time, name, float(fn(f, state))))
        if callback is not None:
            callback(state, rec)
        return rec

    loss, acc, g = evaluate_with_gradient(f, theta)
    res = sharp(theta)
    lam = res.top
    rec = record(theta, t, loss, acc, res)
    while True:
        if not (math.isfinite(loss) and np.all(np.isfinite(theta))):
            trace.diverged, trace.status = True, "diverged"
            break
        if cfg.target_loss is not None and loss <= cfg.target_loss:
            trace.status = "reached_target"
            break
        if cfg.target_accuracy is not None and acc is not None and acc >= cfg.target_accuracy:
            trace.status = "reached_target"
            break
        if t >= cfg.max_time * (1 - 1e-12):
            trace.status = "max_time"
            break
        if n_steps >= cfg.max_steps:
            trace.status = "max_steps"
            break
        if since_refresh >= cfg.refresh_every:
            lam = sharp(theta).top
            since_refresh = 0
        h_new = cfg.alpha / lam if lam > 0 else cfg.save_every
        h_nominal = h_new if h_nominal is None else min(h_new, 2.0 * h_nominal)
        t_save = min(next_save * cfg.save_every, cfg.max_time)
        remaining = t_save - t
        # Snap onto the save point rather than leave a rounding-sized remainder.
        landed = h_nominal >= remaining * (1 - 1e-9)
        h = remaining if landed else h_nominal
        theta = rk4_step(f, theta, h, k1=-g)
        n_steps += 1
        since_refresh += 1
        t = t_save if landed else t + h
        rec.eta = h if rec.step == n_steps - 1 else rec.eta
        loss, acc, g = evaluate_with_gradient(f, theta)
        if landed:
            next_save += 1
            res = sharp(theta)
            lam = res.top
            since_refresh = 0
            rec = record(theta, t, loss, acc, res)
    last = trace.records[-1]
    if last.step != n_steps:
        record(theta, t, loss, acc, sharp(theta) if np.all(np.isfinite(theta)) else None)
    trace.final_state = TrainState(theta, np.zeros_like(theta), n_steps, t)
    trace.meta["rk_steps"] = n_steps
    return trace
