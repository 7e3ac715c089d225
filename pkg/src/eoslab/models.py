"""Network specifications, initializers and assembly into a differentiable objective.

Parameter layout is layer-major: for each layer its ``(fan_out, fan_in)``
weight matrix in row-major order, then its bias (MLPs only).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from eoslab import losses as L
from eoslab.autodiff import ACTIVATIONS, Layer, NetworkObjective
from eoslab.tasks import Dataset

MODEL_KINDS = ("mlp", "deep_linear")
INITS = ("torch_default_uniform", "xavier", "gaussian_1_over_d")
PARAMETERIZATIONS = ("standard", "ntk")


@dataclass(frozen=True)
class ModelSpec:
    kind: str = "mlp"
    input_dim: int = 1
    output_dim: int = 1
    hidden: tuple = ()
    activation: str | None = None
    parameterization: str = "standard"
    init: str = "torch_default_uniform"
    seed: int = 0

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.activation is None:
            object.__setattr__(self, "activation", "identity" if self.kind == "deep_linear" else "tanh")
        if self.kind == "deep_linear" and self.activation != "identity":
            raise ValueError("deep_linear networks have identity activation")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.parameterization not in PARAMETERIZATIONS:
            raise ValueError(f"unknown parameterization {self.parameterization!r}")
        if self.init not in INITS:
            raise ValueError(f"unsupported init {self.init!r} for {self.kind}")
        if min((self.input_dim, self.output_dim) + self.hidden) < 1:
            raise ValueError("layer widths must be positive")

    @classmethod
    def deep_linear(cls, depth: int, d: int, **kw) -> "ModelSpec":
        kw.setdefault("init", "gaussian_1_over_d")
        return cls(kind="deep_linear", input_dim=d, output_dim=d, hidden=(d,) * (depth - 1), **kw)

    def layers(self) -> list[Layer]:
        widths = (self.input_dim,) + self.hidden + (self.output_dim,)
        bias = self.kind == "mlp"
        out = []
        for fan_in, fan_out in zip(widths, widths[1:]):
            scale = 1.0 / np.sqrt(fan_in) if self.parameterization == "ntk" else 1.0
            out.append(Layer(fan_in, fan_out, bias, scale))
        return out

    @property
    def num_params(self) -> int:
        return sum(layer.size for layer in self.layers())


def init_params(spec: ModelSpec) -> np.ndarray:
    """Draw initial parameters, deterministic in ``spec.seed``.

    Standard parameterization:

    * ``torch_default_uniform``: weights and biases ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in))
    * ``xavier``: weights ~ U(-a, a) with a = sqrt(6/(fan_in+fan_out)); biases zero
    * ``gaussian_1_over_d``: weights ~ N(0, 1/fan_in); biases zero

    NTK parameterization ignores ``init``: weights ~ N(0, 1), biases zero, and
    the forward map carries the 1/sqrt(fan_in) factor instead.
    """
    rng = np.random.default_rng(spec.seed)
    parts = []
    for layer in spec.layers():
        shape = (layer.fan_out, layer.fan_in)
        bound = 1.0 / np.sqrt(layer.fan_in)
        if spec.parameterization == "ntk":
            W = rng.standard_normal(shape)
            b = np.zeros(layer.fan_out)
        elif spec.init == "torch_default_uniform":
            W = rng.uniform(-bound, bound, shape)
            b = rng.uniform(-bound, bound, layer.fan_out)
        elif spec.init == "xavier":
            a = np.sqrt(6.0 / (layer.fan_in + layer.fan_out))
            W = rng.uniform(-a, a, shape)
            b = np.zeros(layer.fan_out)
        else:
            W = rng.normal(0.0, bound, shape)
            b = np.zeros(layer.fan_out)
        parts.append(W.ravel())
        if layer.bias:
            parts.append(b)
    return np.concatenate(parts)


def to_standard(spec: ModelSpec, theta: np.ndarray) -> np.ndarray:
    """Weights of the standard-parameterized twin computing the same function as an NTK net."""
    if spec.parameterization != "ntk":
        return np.array(theta, dtype=np.float64)
    out = np.array(theta, dtype=np.float64)
    start = 0
    for layer in spec.layers():
        nw = layer.fan_in * layer.fan_out
        out[start:start + nw] *= layer.scale
        start += layer.size
    return out


def loss_targets(loss: L.LossSpec, data: Dataset) -> np.ndarray:
    if data.kind == "regression":
        if loss.kind != "mse":
            raise ValueError(f"regression data needs mse loss, not {loss.kind}")
        return L.prepare_targets(loss, data.targets)
    if loss.kind == "logistic":
        y = data.targets
        if set(np.unique(y)) <= {0, 1}:
            y = 2 * y - 1
        return L.prepare_targets(loss, y)
    if data.classes and data.classes != loss.classes:
        raise ValueError(f"dataset has {data.classes} classes, loss expects {loss.classes}")
    return L.prepare_targets(loss, data.targets)


def build_computation(model: ModelSpec, loss: L.LossSpec, data: Dataset, batch=None) -> NetworkObjective:
    """Full-batch objective of ``model`` on ``data``; ``batch`` restricts the average to those rows."""
    if data.n == 0:
        raise ValueError("empty dataset")
    if model.input_dim != data.d:
        raise ValueError(f"model input dim {model.input_dim} != data feature dim {data.d}")
    if model.output_dim != loss.output_dim:
        raise ValueError(f"model output dim {model.output_dim} != loss arity {loss.output_dim}")
    f = NetworkObjective(model.layers(), model.activation, loss, data.features, loss_targets(loss, data))
    return f if batch is None else f.subset(batch)
