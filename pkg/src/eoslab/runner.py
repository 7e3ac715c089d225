"""Config-driven experiment runs.

A config is a flat text file of ``key = value`` lines with dotted section
keys; ``#`` starts a comment.  List values are comma separated.  Keys of the
form ``sweep.<key> = v1, v2, ...`` fan one config out into the Cartesian
product of their values.  Every run writes ``trace.csv``, ``summary.csv`` and
``config.txt`` (the fully resolved config) into its own directory.
"""
from __future__ import annotations

import csv
import itertools
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from eoslab import diagnostics as D
from eoslab import flow as F
from eoslab import losses as L
from eoslab import models as M
from eoslab import optimize as O
from eoslab import quadratic as Q
from eoslab import tasks as T

VERSION = "0.1.0"
MODES = ("train", "flow", "quadratic", "diagnose")


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"config key {key!r}: {message}")
        self.key = key


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text: str) -> tuple:
    return tuple(float(x) for x in text.split(",") if x.strip())


def _ints(text: str) -> tuple:
    return tuple(int(x) for x in text.split(",") if x.strip())


def _opt(conv):
    def parse(text):
        return None if text.lower() in ("", "none") else conv(text)
    return parse


# key -> (parser, default, allowed values or None)
SCHEMA = {
    "experiment": (str, "train", MODES),
    "name": (str, "run", None),
    "task.kind": (str, "blobs", ("blobs", "chebyshev", "deep_linear", "cifar")),
    "task.n": (int, 512, None),
    "task.d": (int, 32, None),
    "task.classes": (int, 10, None),
    "task.separation": (float, 2.0, None),
    "task.noise": (float, 1.0, None),
    "task.degree": (int, 5, None),
    "task.points": (int, 20, None),
    "task.seed": (int, 0, None),
    "task.path": (_opt(str), None, None),
    "task.count": (int, 5000, None),
    "task.mean": (_floats, T.CIFAR_MEAN, None),
    "task.std": (_floats, T.CIFAR_STD, None),
    "model.kind": (str, "mlp", M.MODEL_KINDS),
    "model.hidden": (_ints, (32, 32), None),
    "model.depth": (int, 3, None),
    "model.activation": (_opt(str), None, None),
    "model.parameterization": (str, "standard", ("standard", "ntk")),
    "model.init": (str, "torch_default_uniform", M.INITS),
    "model.seed": (int, 0, None),
    "loss.kind": (str, "mse", L.LOSS_KINDS),
    "optimizer.algorithm": (str, "gd", O.ALGORITHMS),
    "optimizer.eta": (float, 0.01, None),
    "optimizer.beta": (float, 0.0, None),
    "optimizer.schedule": (str, "constant", O.SCHEDULES),
    "optimizer.eta_after": (_opt(float), None, None),
    "optimizer.drop_step": (_opt(int), None, None),
    "optimizer.drop_offset": (_opt(int), None, None),
    "optimizer.c": (float, 1.0, None),
    "optimizer.refresh_every": (int, 1, None),
    "optimizer.batch_size": (_opt(int), None, None),
    "optimizer.seed": (int, 0, None),
    "flow.alpha": (float, 0.5, None),
    "flow.refresh_every": (int, 20, None),
    "flow.save_every": (float, 1.0, None),
    "flow.max_time": (float, 100.0, None),
    "stop.max_steps": (int, 1000, None),
    "stop.target_loss": (_opt(float), None, None),
    "stop.target_accuracy": (_opt(float), None, None),
    "spectrum.every": (int, 10, None),
    "spectrum.top_k": (int, 1, None),
    "spectrum.seed": (int, 0, None),
    "spectrum.tol": (float, 1e-6, None),
    "spectrum.subsample": (_opt(int), None, None),
    "projection.every": (int, 0, None),
    "projection.k": (int, D.PROJECTION_DIM, None),
    "projection.seed": (int, 0, None),
    "diagnostics.effective_smoothness": (int, 0, None),
    "diagnostics.between_iterate": (int, 0, None),
    "diagnostics.gauss_newton": (int, 0, None),
    "diagnostics.expected_loss_change": (int, 0, None),
    "diagnostics.batch_size": (_opt(int), None, None),
    "diagnostics.mc_samples": (int, D.MC_SAMPLES, None),
    "diagnostics.mc_seed": (int, 0, None),
    "diagnostics.taylor_step": (_opt(int), None, None),
    "diagnostics.taylor_steps": (int, 100, None),
    "quadratic.eigenvalues": (_floats, (20.0, 1.0), None),
    "quadratic.x0": (_opt(_floats), None, None),
    "quadratic.linear": (_opt(_floats), None, None),
    "quadratic.steps": (int, 100, None),
    "quadratic.boundary": (_bool, False, None),
    "quadratic.betas": (_floats, (0.0, 0.5, 0.9), None),
    "quadratic.margin": (float, 1e-3, None),
    "output.dir": (str, "runs", None),
}


@dataclass
class ExperimentConfig:
    values: dict

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        return self.values.get(key, default)

    def echo(self) -> str:
        lines = [f"# eoslab {VERSION}"]
        for key in SCHEMA:
            lines.append(f"{key} = {_format(self.values[key])}")
        return "\n".join(lines) + "\n"

    def replace(self, **updates) -> "ExperimentConfig":
        vals = dict(self.values)
        for key, text in updates.items():
            vals[key] = _coerce(key, text) if isinstance(text, str) else text
        return ExperimentConfig(vals)


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _coerce(key: str, text: str):
    if key not in SCHEMA:
        raise ConfigError(key, "unknown key")
    parse, _, allowed = SCHEMA[key]
    try:
        value = parse(text.strip())
    except ValueError as exc:
        raise ConfigError(key, f"cannot parse {text.strip()!r} ({exc})") from None
    if allowed is not None and value not in allowed:
        raise ConfigError(key, f"{value!r} is not one of {', '.join(allowed)}")
    return value


def parse_lines(lines) -> tuple[dict, dict]:
    """Split config lines into base assignments and sweep lists (both as raw text)."""
    base, sweep = {}, {}
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(line, f"line {lineno} is not of the form key = value")
        key, _, text = (part.strip() for part in line.partition("="))
        if key.startswith("sweep."):
            target = key[len("sweep."):]
            if target not in SCHEMA:
                raise ConfigError(key, "unknown key")
            sweep[target] = [v.strip() for v in text.split(",") if v.strip()]
            if not sweep[target]:
                raise ConfigError(key, "sweep needs at least one value")
        else:
            if key not in SCHEMA:
                raise ConfigError(key, "unknown key")
            base[key] = text
    return base, sweep


def build_config(base: dict) -> ExperimentConfig:
    values = {key: spec[1] for key, spec in SCHEMA.items()}
    for key, text in base.items():
        values[key] = _coerce(key, text)
    return ExperimentConfig(values)


def load_configs(path, overrides: dict | None = None) -> list[tuple[str, ExperimentConfig]]:
    """Parse ``path`` into ``(run_name, config)`` pairs, one per sweep point."""
    with open(path) as fh:
        base, sweep = parse_lines(fh)
    for key, text in (overrides or {}).items():
        base[key] = text
        sweep.pop(key, None)
    if not sweep:
        cfg = build_config(base)
        return [(cfg["name"], cfg)]
    keys = list(sweep)
    runs = []
    for i, combo in enumerate(itertools.product(*(sweep[k] for k in keys))):
        point = dict(base)
        point.update(zip(keys, combo))
        cfg = build_config(point)
        label = "_".join(f"{k.split('.')[-1]}={v}" for k, v in zip(keys, combo))
        runs.append((f"{cfg['name']}_{i:03d}_{label}", cfg))
    return runs


# ---------------------------------------------------------------- assembly

def make_dataset(cfg: ExperimentConfig) -> T.Dataset:
    kind = cfg["task.kind"]
    if kind == "blobs":
        return T.blobs_dataset(cfg["task.n"], cfg["task.d"], cfg["task.classes"],
                               cfg["task.separation"], cfg["task.seed"], cfg["task.noise"])
    if kind == "chebyshev":
        return T.chebyshev_dataset(cfg["task.degree"], cfg["task.points"])
    if kind == "deep_linear":
        return T.deep_linear_dataset(cfg["task.n"], cfg["task.d"], cfg["task.seed"])
    if cfg["task.path"] is None:
        raise ConfigError("task.path", "cifar task needs a path to the binary batches")
    return T.load_cifar_subset(cfg["task.path"], cfg["task.count"], cfg["task.mean"], cfg["task.std"])


def make_model(cfg: ExperimentConfig, data: T.Dataset, loss: L.LossSpec) -> M.ModelSpec:
    try:
        if cfg["model.kind"] == "deep_linear":
            return M.ModelSpec.deep_linear(cfg["model.depth"], data.d, seed=cfg["model.seed"],
                                           parameterization=cfg["model.parameterization"])
        return M.ModelSpec(kind="mlp", input_dim=data.d, output_dim=loss.output_dim,
                           hidden=cfg["model.hidden"], activation=cfg["model.activation"],
                           parameterization=cfg["model.parameterization"],
                           init=cfg["model.init"], seed=cfg["model.seed"])
    except ValueError as exc:
        msg = str(exc)
        key = next((f"model.{k}" for k in ("activation", "init", "parameterization", "hidden")
                    if k in msg), "model.kind")
        raise ConfigError(key, msg) from None


def make_loss(cfg: ExperimentConfig, data: T.Dataset) -> L.LossSpec:
    kind = cfg["loss.kind"]
    if data.kind == "regression":
        return L.LossSpec(kind, data.targets.shape[1] if data.targets.ndim == 2 else 1)
    return L.LossSpec(kind, data.classes)


def make_optimizer(cfg: ExperimentConfig) -> O.OptimizerSpec:
    try:
        return O.OptimizerSpec(
            algorithm=cfg["optimizer.algorithm"], eta=cfg["optimizer.eta"],
            beta=cfg["optimizer.beta"], schedule=cfg["optimizer.schedule"],
            eta_after=cfg["optimizer.eta_after"], drop_step=cfg["optimizer.drop_step"],
            drop_offset=cfg["optimizer.drop_offset"], c=cfg["optimizer.c"],
            refresh_every=cfg["optimizer.refresh_every"],
            batch_size=cfg["optimizer.batch_size"], seed=cfg["optimizer.seed"])
    except ValueError as exc:
        raise ConfigError(_optimizer_key(str(exc)), str(exc)) from None


def _optimizer_key(message: str) -> str:
    for field in ("beta", "eta_after", "drop_step", "batch_size", "refresh_every", "eta"):
        if field in message:
            return f"optimizer.{field}"
    return "optimizer.algorithm"


def make_flow_config(cfg: ExperimentConfig) -> F.FlowConfig:
    try:
        return F.FlowConfig(alpha=cfg["flow.alpha"], refresh_every=cfg["flow.refresh_every"],
                            save_every=cfg["flow.save_every"], max_time=cfg["flow.max_time"],
                            target_loss=cfg["stop.target_loss"],
                            target_accuracy=cfg["stop.target_accuracy"],
                            top_k=cfg["spectrum.top_k"], lanczos_seed=cfg["spectrum.seed"],
                            lanczos_tol=cfg["spectrum.tol"])
    except ValueError as exc:
        key = "flow.alpha" if "alpha" in str(exc) else "flow.save_every"
        raise ConfigError(key, str(exc)) from None


def build_objective(cfg: ExperimentConfig):
    data = make_dataset(cfg)
    loss = make_loss(cfg, data)
    model = make_model(cfg, data, loss)
    try:
        f = M.build_computation(model, loss, data)
    except ValueError as exc:
        raise ConfigError("loss.kind", str(exc)) from None
    return f, M.init_params(model), model


def _diagnostics(cfg: ExperimentConfig, f):
    out = []
    every = cfg["diagnostics.effective_smoothness"]
    if every:
        out.append(("effective_smoothness", every,
                    lambda f, s, opt, eta: D.effective_smoothness(f, s.theta, eta)))
    every = cfg["diagnostics.between_iterate"]
    if every:
        def between(f, s, opt, eta):
            nxt = O.step(opt, f, s, eta) if opt.algorithm != "sgd" else O.step(replace_gd(opt), f, s, eta)
            return D.between_iterate_sharpness(f, s.theta, nxt.theta, tol=cfg["spectrum.tol"],
                                               seed=cfg["spectrum.seed"])
        out.append(("between_iterate_sharpness", every, between))
    every = cfg["diagnostics.gauss_newton"]
    if every:
        snaps = {}

        def snap(f, s):
            if snaps.get("step") != s.step:
                snaps["step"], snaps["snap"] = s.step, D.gn_snapshot(f, s.theta, cfg["spectrum.tol"],
                                                                     cfg["spectrum.seed"])
            return snaps["snap"]
        out += [
            ("gn.hessian_top", every, lambda f, s, o, e: snap(f, s).hessian_top),
            ("gn.gauss_newton_top", every, lambda f, s, o, e: snap(f, s).gn_top),
            ("gn.jtj_top", every, lambda f, s, o, e: snap(f, s).jtj_top),
            ("gn.median_margin", every, lambda f, s, o, e: float(np.median(snap(f, s).margins))),
            ("gn.mean_loss_hessian", every,
             lambda f, s, o, e: float(np.mean(snap(f, s).loss_hessian_scalars))),
        ]
    every = cfg["diagnostics.expected_loss_change"]
    if every:
        batch = cfg["diagnostics.batch_size"] or cfg["optimizer.batch_size"] or f.n
        changes = {}

        def change(f, s, eta):
            if changes.get("step") != s.step:
                changes["step"], changes["value"] = s.step, D.expected_loss_change(
                    f, s.theta, eta, batch, cfg["diagnostics.mc_samples"], cfg["diagnostics.mc_seed"])
            return changes["value"]
        out += [
            ("expected_loss_change.mean", every, lambda f, s, o, e: change(f, s, e)[0]),
            ("expected_loss_change.stderr", every, lambda f, s, o, e: change(f, s, e)[1]),
        ]
    return out


def replace_gd(opt: O.OptimizerSpec) -> O.OptimizerSpec:
    return O.with_schedule(opt, algorithm="gd", batch_size=None)


# ---------------------------------------------------------------- execution

SUMMARY_COLUMNS = ["run", "mode", "label", "algorithm", "eta", "beta", "mss", "status", "diverged",
                   "breakeven_step", "max_sharpness", "post_breakeven_ratio", "iterations",
                   "iterations_to_target", "final_loss", "final_accuracy"]


def summarize_trace(run: str, mode: str, trace: O.TrainTrace, mss_value: float | None) -> dict:
    """One summary row; the ratio is the median post-breakeven sharpness over the MSS."""
    sharp = [r for r in trace.sharpness_records() if r.sharpness is not None]
    breakeven = D.detect_breakeven(trace, mss_value) if mss_value else None
    ratio = None
    if breakeven is not None:
        post = [r.sharpness for r in sharp if r.step >= breakeven]
        ratio = float(np.median(post)) / mss_value
    last = trace.records[-1]
    meta = trace.meta
    return {
        "run": run, "mode": mode, "label": trace.label,
        "algorithm": meta.get("algorithm"), "eta": meta.get("eta"), "beta": meta.get("beta"),
        "mss": mss_value, "status": trace.status, "diverged": trace.diverged,
        "breakeven_step": breakeven,
        "max_sharpness": max((r.sharpness for r in sharp), default=None),
        "post_breakeven_ratio": ratio,
        "iterations": last.step,
        "iterations_to_target": last.step if trace.status == "reached_target" else None,
        "final_loss": last.loss, "final_accuracy": last.accuracy,
    }


def write_rows(path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([O._cell(row.get(c)) for c in columns])


def emit_summary(rows, path) -> None:
    """Comparison CSV with one row per run."""
    rows = list(rows)
    if not rows:
        raise ValueError("emit_summary needs at least one run")
    write_rows(path, SUMMARY_COLUMNS, rows)


def write_projection(trace: O.TrainTrace, path) -> None:
    recs = [r for r in trace.records if r.projection is not None]
    if not recs:
        return
    k = recs[0].projection.shape[0]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "time"] + [f"m{i}" for i in range(k)])
        for r in recs:
            w.writerow([r.step, repr(float(r.time))] + [repr(float(x)) for x in r.projection])


def run_train(cfg: ExperimentConfig, outdir: Path, mode: str) -> dict:
    f, theta0, _ = build_objective(cfg)
    opt = make_optimizer(cfg)
    projection = None
    if cfg["projection.every"]:
        projection = D.ProjectionBasis(f.dim, cfg["projection.k"], cfg["projection.seed"])
    sharp_f = f.subset(np.arange(min(cfg["spectrum.subsample"], f.n))) if cfg["spectrum.subsample"] else None
    captured = {}
    taylor_at = cfg["diagnostics.taylor_step"] if mode == "diagnose" else None

    def grab(state, rec):
        if taylor_at is not None and state.step == taylor_at:
            captured["theta"] = state.theta.copy()
    trace = O.train(f, theta0, opt, max_steps=cfg["stop.max_steps"],
                    target_loss=cfg["stop.target_loss"], target_accuracy=cfg["stop.target_accuracy"],
                    sharpness_every=cfg["spectrum.every"], top_k=cfg["spectrum.top_k"],
                    lanczos_seed=cfg["spectrum.seed"], lanczos_tol=cfg["spectrum.tol"],
                    projection=projection, project_every=cfg["projection.every"] or None,
                    diagnostics=_diagnostics(cfg, f), callback=grab, sharpness_f=sharp_f)
    trace.label = "gradient_descent" if opt.algorithm == "gd" else opt.algorithm
    trace.to_csv(outdir / "trace.csv")
    write_projection(trace, outdir / "projection.csv")
    if "theta" in captured:
        steps = cfg["diagnostics.taylor_steps"]
        probe = D.taylor_probe(f, captured["theta"], opt.eta_at(taylor_at), steps)
        gd = O.train(f, captured["theta"], replace_gd(O.with_schedule(opt, schedule="constant", beta=0.0)),
                     max_steps=steps, sharpness_every=None)
        with open(outdir / "taylor.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "taylor_loss", "gd_loss"])
            for i, (a, r) in enumerate(zip(probe, gd.records)):
                w.writerow([i, repr(float(a)), repr(float(r.loss))])
    mss_value = trace.meta.get("mss")
    if opt.schedule == "drop":
        mss_value = opt.mss(0)
    return summarize_trace(cfg["name"], mode, trace, mss_value)


def run_flow(cfg: ExperimentConfig, outdir: Path) -> dict:
    f, theta0, _ = build_objective(cfg)
    projection = None
    if cfg["projection.every"]:
        projection = D.ProjectionBasis(f.dim, cfg["projection.k"], cfg["projection.seed"])
    # Flow has no step size of its own; diagnostics that need one use optimizer.eta
    # and are evaluated at every save point whenever their cadence is nonzero.
    opt = make_optimizer(cfg)
    diags = [(name, lambda f, s, fn=fn: fn(f, s, opt, opt.eta)) for name, _, fn in _diagnostics(cfg, f)]
    trace = F.integrate_flow(f, theta0, make_flow_config(cfg), projection=projection, diagnostics=diags)
    trace.to_csv(outdir / "trace.csv")
    write_projection(trace, outdir / "projection.csv")
    # Compare against the GD step size named in the config, if any.
    mss_value = Q.mss("gd", cfg["optimizer.eta"]) if cfg["optimizer.eta"] > 0 else None
    return summarize_trace(cfg["name"], "flow", trace, mss_value)


def run_quadratic(cfg: ExperimentConfig, outdir: Path) -> dict:
    alg = cfg["optimizer.algorithm"]
    if alg not in Q.ALGORITHMS:
        raise ConfigError("optimizer.algorithm", f"quadratic runs support {', '.join(Q.ALGORITHMS)}")
    eigs = cfg["quadratic.eigenvalues"]
    x0 = cfg["quadratic.x0"] or (1.0,) * len(eigs)
    if len(x0) != len(eigs):
        raise ConfigError("quadratic.x0", f"needs {len(eigs)} entries")
    linear = cfg["quadratic.linear"]
    if linear is not None and len(linear) != len(eigs):
        raise ConfigError("quadratic.linear", f"needs {len(eigs)} entries")
    eta, beta = cfg["optimizer.eta"], cfg["optimizer.beta"]
    try:
        spec = Q.QuadraticSpec(eigs, linear=linear)
        verdicts = Q.classify_stability(alg, spec, eta, beta)
    except ValueError as exc:
        raise ConfigError("optimizer.beta" if "beta" in str(exc) else "optimizer.eta", str(exc)) from None
    sim = Q.simulate(alg, spec, eta, beta, x0, cfg["quadratic.steps"])
    f = Q.QuadraticObjective(spec)
    with open(outdir / "coords.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "loss"] + [f"coord{i + 1}" for i in range(spec.dim)])
        for t, (x, c) in enumerate(zip(sim.iterates, sim.coords)):
            w.writerow([t, repr(f.value(x))] + [repr(float(v)) for v in c])
    # A trace in the common schema, with the exact (constant) sharpness.
    trace = O.TrainTrace(label="quadratic", diverged=sim.diverged,
                         status="diverged" if sim.diverged else "max_steps",
                         meta={"algorithm": alg, "eta": eta, "beta": beta})
    top = float(np.max(spec.eigenvalues))
    for t, x in enumerate(sim.iterates):
        trace.records.append(O.Record(t, t * eta, eta, f.value(x), None, top, (top,)))
    trace.to_csv(outdir / "trace.csv")
    if cfg["quadratic.boundary"]:
        rows = []
        for a in (Q.ALGORITHMS if alg == "gd" else (alg,)):
            for b in cfg["quadratic.betas"]:
                if a == "gd" and b != 0.0:
                    continue
                rows.append(Q.boundary_check(a, eta, b, cfg["quadratic.margin"]))
        cols = ["alg", "eta", "beta", "mss", "bounded_below", "max_abs_below",
                "diverged_above", "steps_to_diverge"]
        write_rows(outdir / "boundary.csv", cols, rows)
    row = summarize_trace(cfg["name"], "quadratic", trace, Q.mss(alg, eta, beta))
    # Divergence along any direction is a property of the spectrum; the short
    # simulation may end before the magnitude crosses the threshold.
    row["label"] = "+".join(verdicts)
    row["diverged"] = sim.diverged or "divergent" in verdicts
    return row


def run_config(cfg: ExperimentConfig, outdir, mode: str | None = None, run_name: str | None = None) -> dict:
    """Execute one resolved config into ``outdir``; returns its summary row."""
    mode = mode or cfg["experiment"]
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "config.txt").write_text(cfg.echo())
    if mode in ("train", "diagnose"):
        row = run_train(cfg, outdir, mode)
    elif mode == "flow":
        row = run_flow(cfg, outdir)
    elif mode == "quadratic":
        row = run_quadratic(cfg, outdir)
    else:
        raise ConfigError("experiment", f"unknown mode {mode!r}")
    row["run"] = run_name or cfg["name"]
    emit_summary([row], outdir / "summary.csv")
    return row


def _run_one(args):
    name, cfg, outdir, mode = args
    return run_config(cfg, outdir, mode, name)


def run_many(runs, outroot, mode: str | None = None, jobs: int = 1) -> list[dict]:
    """Run several configs, each into ``outroot/<name>``, then write the joint summary."""
    outroot = Path(outroot)
    work = [(name, cfg, outroot / name if len(runs) > 1 else outroot, mode) for name, cfg in runs]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_run_one, work))
    else:
        rows = [_run_one(w) for w in work]
    if len(rows) > 1:
        emit_summary(rows, outroot / "summary.csv")
    return rows


def collect_summaries(paths) -> list[dict]:
    """Read the per-run ``summary.csv`` files found under ``paths``."""
    rows = []
    for p in paths:
        p = Path(p)
        files = [p] if p.is_file() else sorted(p.rglob("summary.csv"))
        for fpath in files:
            if not (fpath.parent / "config.txt").exists():
                continue
            with open(fpath) as fh:
                rows.extend(csv.DictReader(fh))
    return rows


def _num(text):
    try:
        return float(text)
    except (TypeError, ValueError):
        return math.nan


def read_trace(path) -> list[dict]:
    with open(path) as fh:
        return list(csv.DictReader(fh))


def svg_chart(trace_rows, columns=("loss", "sharpness"), width=640, height=240) -> str:
    """Plain SVG line charts, one panel per column, against ``step``."""
    panels = []
    colors = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")
    for i, col in enumerate(columns):
        pts = [(_num(r["step"]), _num(r[col])) for r in trace_rows if r.get(col) not in (None, "")]
        pts = [(x, y) for x, y in pts if math.isfinite(x) and math.isfinite(y)]
        top = i * (height + 30)
        panels.append(f'<text x="10" y="{top + 16}" font-size="13">{col}</text>')
        if len(pts) < 2:
            continue
        xs, ys = zip(*pts)
        x0, x1 = min(xs), max(xs) or 1.0
        y0, y1 = min(ys), max(ys)
        if y1 == y0:
            y1 = y0 + 1.0
        sx = lambda x: 50 + (width - 60) * (x - x0) / ((x1 - x0) or 1.0)
        sy = lambda y: top + 20 + (height - 30) * (1 - (y - y0) / (y1 - y0))
        path = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in pts)
        panels.append(f'<polyline fill="none" stroke="{colors[i % len(colors)]}" stroke-width="1" '
                      f'points="{path}"/>')
        panels.append(f'<text x="2" y="{top + 30}" font-size="10">{y1:.4g}</text>')
        panels.append(f'<text x="2" y="{top + height - 10}" font-size="10">{y0:.4g}</text>')
        panels.append(f'<text x="{width - 60}" y="{top + height + 5}" font-size="10">step {x1:.0f}</text>')
    total = len(columns) * (height + 30)
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{total}">\n'
            + "\n".join(panels) + "\n</svg>\n")


def default_jobs() -> int:
    return max(1, (os.cpu_count() or 1))
