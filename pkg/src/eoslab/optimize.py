"""Full-batch GD, Polyak/Nesterov momentum, minibatch SGD and the traced training loop."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from eoslab import quadratic
from eoslab.autodiff import Computation
from eoslab.spectrum import TOL, top_eigs

ALGORITHMS = ("gd", "polyak", "nesterov", "sgd")
SCHEDULES = ("constant", "drop", "dynamic")
TRACE_COLUMNS = ["step", "time", "eta", "loss", "accuracy", "sharpness",
                 "eig2", "eig3", "eig4", "eig5", "eig6", "diagnostic", "value"]


@dataclass(frozen=True)
class OptimizerSpec:
    """Update rule plus step-size schedule.

    ``constant`` uses ``eta``; ``drop`` switches from ``eta`` to ``eta_after``
    at ``drop_step`` (or, when only ``drop_offset`` is set, ``drop_offset``
    steps after the first measured sharpness reaches the MSS); ``dynamic``
    sets ``eta_t = c / lambda`` with the sharpness re-measured every
    ``refresh_every`` steps.
    """

    algorithm: str = "gd"
    eta: float = 0.01
    beta: float = 0.0
    schedule: str = "constant"
    eta_after: float | None = None
    drop_step: int | None = None
    drop_offset: int | None = None
    c: float = 1.0
    refresh_every: int = 1
    batch_size: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if not 0.0 <= self.beta < 1.0:
            raise ValueError("beta must lie in [0, 1)")
        if self.algorithm in ("gd", "sgd") and self.beta != 0.0:
            raise ValueError(f"{self.algorithm} takes no momentum")
        if self.schedule != "dynamic" and not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.schedule == "drop" and (self.eta_after is None or not self.eta_after > 0
                                        or (self.drop_step is None and self.drop_offset is None)):
            raise ValueError("drop schedule needs a positive eta_after and drop_step or drop_offset")
        if self.schedule == "dynamic" and (self.c <= 0 or self.refresh_every < 1):
            raise ValueError("dynamic schedule needs c > 0 and refresh_every >= 1")
        if self.algorithm == "sgd" and not (self.batch_size and self.batch_size >= 1):
            raise ValueError("sgd needs a positive batch_size")

    @property
    def mss_algorithm(self) -> str:
        return "gd" if self.algorithm == "sgd" else self.algorithm

    def eta_at(self, step: int, sharpness: float | None = None, drop_step: int | None = None) -> float:
        if self.schedule == "constant":
            return self.eta
        if self.schedule == "drop":
            at = self.drop_step if drop_step is None else drop_step
            return self.eta if at is None or step < at else self.eta_after
        if sharpness is None or not sharpness > 0:
            raise ValueError("dynamic step size needs a positive sharpness")
        return self.c / sharpness

    def mss(self, step: int = 0, sharpness: float | None = None) -> float:
        return quadratic.mss(self.mss_algorithm, self.eta_at(step, sharpness), self.beta)


@dataclass
class TrainState:
    theta: np.ndarray
    velocity: np.ndarray
    step: int = 0
    time: float = 0.0

    @classmethod
    def initial(cls, theta0) -> "TrainState":
        theta = np.array(theta0, dtype=np.float64)
        return cls(theta, np.zeros_like(theta))


@dataclass
class Record:
    step: int
    time: float
    eta: float
    loss: float
    accuracy: float | None = None
    sharpness: float | None = None
    eigs: tuple = ()
    projection: np.ndarray | None = None


@dataclass
class TrainTrace:
    records: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)  # (step, time, name, value)
    diverged: bool = False
    status: str = "running"
    label: str = "gradient_descent"
    meta: dict = field(default_factory=dict)
    final_state: TrainState | None = None

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=np.float64)

    @property
    def steps(self) -> np.ndarray:
        return np.array([r.step for r in self.records])

    @property
    def losses(self) -> np.ndarray:
        return self.column("loss")

    def sharpness_records(self) -> list:
        return [r for r in self.records if r.sharpness is not None]

    def diagnostic(self, name: str) -> list:
        return [(s, t, v) for s, t, n, v in self.diagnostics if n == name]

    def record_at(self, step: int) -> Record:
        for r in self.records:
            if r.step == step:
                return r
        raise KeyError(step)

    def rows(self):
        for r in self.records:
            eigs = list(r.eigs[1:6]) + [None] * (5 - len(r.eigs[1:6]))
            yield [r.step, r.time, r.eta, r.loss, r.accuracy, r.sharpness, *eigs, None, None]
        for s, t, name, v in self.diagnostics:
            yield [s, t, None, None, None, None, None, None, None, None, None, name, v]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_COLUMNS)
            for row in self.rows():
                w.writerow([_cell(x) for x in row])


def _cell(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    return repr(float(x))


class Diverged(ArithmeticError):
    pass


def step(opt: OptimizerSpec, f: Computation, state: TrainState, eta: float | None = None,
         grad: np.ndarray | None = None, batch=None) -> TrainState:
    """One update of ``opt`` from ``state``.

    ``grad`` may pass a precomputed gradient at ``state.theta`` (not used by
    Nesterov, which needs it at the look-ahead point).  For SGD, ``batch``
    holds the example indices of this step.
    """
    if eta is None:
        eta = opt.eta_at(state.step)
    theta, v = state.theta, state.velocity
    if opt.algorithm == "sgd" and batch is not None:
        f = f.subset(batch)
        grad = None
    if opt.algorithm == "nesterov":
        g = f.gradient(theta + opt.beta * v)
    else:
        g = f.gradient(theta) if grad is None else grad
    if not np.all(np.isfinite(g)):
        raise Diverged(f"non-finite gradient at step {state.step}")
    if opt.algorithm in ("gd", "sgd"):
        new_theta = theta - eta * g
        new_v = v
    else:
        new_v = opt.beta * v - eta * g
        new_theta = theta + new_v
    return TrainState(new_theta, new_v, state.step + 1, state.time + eta)


class BatchSampler:
    """Fixed partition of a reshuffled epoch into sorted index batches (last partial batch dropped)."""

    def __init__(self, n: int, batch_size: int, seed: int = 0):
        self.n = n
        self.batch_size = min(batch_size, n)
        self.rng = np.random.default_rng(seed)
        self._queue = []

    def __next__(self) -> np.ndarray:
        if not self._queue:
            perm = self.rng.permutation(self.n)
            b = self.batch_size
            self._queue = [np.sort(perm[i:i + b]) for i in range(0, self.n - b + 1, b)]
        return self._queue.pop(0)

    def __iter__(self):
        return self


def evaluate_with_gradient(f: Computation, theta):
    if hasattr(f, "evaluate_with_gradient"):
        return f.evaluate_with_gradient(theta)
    val, g = f.value_and_gradient(theta)
    return val, f.accuracy(theta), g


def train(f: Computation, theta0, opt: OptimizerSpec, *, max_steps: int,
          target_loss: float | None = None, target_accuracy: float | None = None,
          sharpness_every: int | None = 10, top_k: int = 1, lanczos_seed: int = 0,
          lanczos_tol: float = TOL, projection=None, project_every: int | None = None,
          diagnostics=(), callback=None, divergence_threshold: float = 1e12,
          sharpness_f: Computation | None = None) -> TrainTrace:
    """Run ``opt`` on ``f`` from ``theta0`` and record a trace.

    One record per step holds the loss/accuracy at the iterate *before* the
    update and the step size then applied.  Sharpness (top ``top_k``
    eigenvalues) is measured every ``sharpness_every`` steps, plus at every
    refresh of a dynamic schedule.  ``projection`` (a
    :class:`~eoslab.diagnostics.ProjectionBasis`) is applied every
    ``project_every`` steps.  ``diagnostics`` is a sequence of
    ``(name, every, fn)`` with ``fn(f, state, opt, eta) -> float``.
    Training stops at ``max_steps``, the first iterate meeting a target, or
    divergence (non-finite values or a parameter beyond ``divergence_threshold``).
    ``callback(state, record)`` sees every recorded iterate.  ``sharpness_f``
    swaps in another objective (e.g. a fixed subsample) for the eigensolves.
    """
    trace = TrainTrace(meta={"algorithm": opt.algorithm, "eta": opt.eta, "beta": opt.beta,
                             "schedule": opt.schedule, "batch_size": opt.batch_size})
    if opt.schedule != "dynamic":
        trace.meta["mss"] = opt.mss(0)
    if projection is not None:
        trace.meta["projection_seed"] = projection.seed
    sampler = BatchSampler(f.n, opt.batch_size, opt.seed) if opt.algorithm == "sgd" else None
    state = TrainState.initial(theta0)
    f.check(state.theta)
    lam = None
    drop_at = opt.drop_step
    while True:
        t = state.step
        loss, acc, g = evaluate_with_gradient(f, state.theta)
        finite = math.isfinite(loss) and np.all(np.isfinite(g)) and \
            np.max(np.abs(state.theta)) <= divergence_threshold
        rec = Record(t, state.time, math.nan, loss, acc)
        if not finite:
            trace.records.append(rec)
            trace.diverged, trace.status = True, "diverged"
            break
        measure = bool(sharpness_every) and t % sharpness_every == 0
        if opt.schedule == "dynamic" and t % opt.refresh_every == 0:
            measure = True
        if measure:
            res = top_eigs(sharpness_f or f, state.theta, top_k, lanczos_tol, seed=lanczos_seed)
            rec.sharpness = float(res.eigenvalues[0])
            rec.eigs = tuple(float(e) for e in res.eigenvalues)
            lam = rec.sharpness
            if opt.schedule == "drop" and drop_at is None and lam >= trace.meta["mss"]:
                drop_at = t + opt.drop_offset
                trace.meta["drop_step"] = drop_at
        eta = opt.eta_at(t, lam, drop_at)
        rec.eta = eta
        if projection is not None and project_every and t % project_every == 0:
            rec.projection = projection.project(state.theta)
        trace.records.append(rec)
        for name, every, fn in diagnostics:
            if every and t % every == 0:
                trace.diagnostics.append((t, state.time, name, float(fn(f, state, opt, eta))))
        if callback is not None:
            callback(state, rec)
        if target_loss is not None and loss <= target_loss:
            trace.status = "reached_target"
            break
        if target_accuracy is not None and acc is not None and acc >= target_accuracy:
            trace.status = "reached_target"
            break
        if t >= max_steps:
            trace.status = "max_steps"
            break
        try:
            batch = next(sampler) if sampler is not None else None
            state = step(opt, f, state, eta, grad=g, batch=batch)
        except Diverged:
            trace.diverged, trace.status = True, "diverged"
            break
    trace.final_state = state
    return trace


def first_step_past_breakeven(trace: TrainTrace, mss_value: float, offset: int = 500) -> int | None:
    """Step ``offset`` past the first record whose sharpness reaches ``mss_value``."""
    for r in trace.records:
        if r.sharpness is not None and r.sharpness >= mss_value:
            return r.step + offset
    return None


def with_schedule(opt: OptimizerSpec, **changes) -> OptimizerSpec:
    return replace(opt, **changes)
