"""Reverse-mode differentiation of full-batch objectives over flat parameter vectors.

The engine here handles the layered networks built in :mod:`eoslab.models`
(fully connected layers, elementwise activations, a per-example loss on the
last layer).  Gradients come from backpropagation; Hessian-vector products
are exact, computed with the R-operator (forward-over-reverse): a forward
pass pushes the tangent ``v`` through the activations and a second backward
pass differentiates the first one along ``v``.  The same forward tangent
pass gives Jacobian-vector products of the outputs, and the plain backward
pass with an arbitrary output cotangent gives vector-Jacobian products; both
are used for matrix-free Gauss-Newton products.

Every evaluation allocates its own scratch arrays, so a :class:`Computation`
can be shared between threads.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from eoslab import losses as L

DENSE_LIMIT = 2000


class Computation:
    """A differentiable scalar objective ``f(theta)`` with ``theta`` of length ``dim``."""

    dim: int

    def value(self, theta: np.ndarray) -> float:
        raise NotImplementedError

    def gradient(self, theta: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def value_and_gradient(self, theta: np.ndarray) -> tuple[float, np.ndarray]:
        return self.value(theta), self.gradient(theta)

    def hvp(self, theta: np.ndarray, v: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def accuracy(self, theta: np.ndarray) -> float | None:
        return None

    def evaluate(self, theta: np.ndarray) -> tuple[float, float | None]:
        """Loss and (if defined) accuracy at ``theta``."""
        return self.value(theta), self.accuracy(theta)

    def check(self, *vectors: np.ndarray) -> None:
        for x in vectors:
            if np.ndim(x) != 1 or len(x) != self.dim:
                raise ValueError(f"expected a vector of length {self.dim}, got shape {np.shape(x)}")


def value(f: Computation, theta) -> float:
    theta = np.asarray(theta, dtype=np.float64)
    f.check(theta)
    return f.value(theta)


def gradient(f: Computation, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    f.check(theta)
    return f.gradient(theta)


def hvp(f: Computation, theta, v) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    f.check(theta, v)
    return f.hvp(theta, v)


def dense_hessian(f: Computation, theta, limit: int = DENSE_LIMIT, symmetrize: bool = True) -> np.ndarray:
    """Assemble the Hessian row by row from Hessian-vector products.

    Only meant as a test oracle; refuses ``dim > limit``.
    """
    if f.dim > limit:
        raise ValueError(f"dense Hessian refused: {f.dim} parameters exceeds the oracle limit {limit}")
    theta = np.asarray(theta, dtype=np.float64)
    f.check(theta)
    H = np.empty((f.dim, f.dim))
    e = np.zeros(f.dim)
    for i in range(f.dim):
        e[i] = 1.0
        H[i] = f.hvp(theta, e)
        e[i] = 0.0
    if symmetrize:
        H = 0.5 * (H + H.T)
    return H


# --- activations ---------------------------------------------------------
# Each entry returns (phi(z), phi'(z), phi''(z)).  Kinks use the subgradient
# convention relu'(0) = 0 and hardtanh'(+-1) = 0.

def _tanh(z):
    t = np.tanh(z)
    d1 = 1.0 - t * t
    return t, d1, -2.0 * t * d1


def _relu(z):
    pos = z > 0
    return np.where(pos, z, 0.0), pos.astype(np.float64), np.zeros_like(z)


def _elu(z):
    pos = z > 0
    ez = np.exp(np.minimum(z, 0.0))
    return np.where(pos, z, ez - 1.0), np.where(pos, 1.0, ez), np.where(pos, 0.0, ez)


def _softplus(z):
    s = expit(z)
    return np.logaddexp(0.0, z), s, s * (1.0 - s)


def _hardtanh(z):
    inside = (z > -1.0) & (z < 1.0)
    return np.clip(z, -1.0, 1.0), inside.astype(np.float64), np.zeros_like(z)


def _identity(z):
    return z, np.ones_like(z), np.zeros_like(z)


ACTIVATIONS = {
    "tanh": _tanh,
    "relu": _relu,
    "elu": _elu,
    "softplus": _softplus,
    "hardtanh": _hardtanh,
    "identity": _identity,
}


@dataclass(frozen=True)
class Layer:
    fan_in: int
    fan_out: int
    bias: bool
    scale: float = 1.0

    @property
    def size(self) -> int:
        return self.fan_in * self.fan_out + (self.fan_out if self.bias else 0)


class NetworkObjective(Computation):
    """Full-batch objective ``(1/n) sum_i loss(h(x_i; theta), y_i)`` of a layered net.

    Layer ``l`` computes ``z_l = scale_l * a_{l-1} @ W_l.T + b_l``; hidden
    layers apply the activation, the last layer is linear.  Parameters are
    laid out layer-major, each layer as its row-major ``(fan_out, fan_in)``
    weight followed by its bias.
    """

    def __init__(self, layers, activation: str, loss: L.LossSpec, inputs, targets):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.layers = tuple(layers)
        self.activation = activation
        self.loss = loss
        self.inputs = np.ascontiguousarray(inputs, dtype=np.float64)
        self.targets = targets
        if self.inputs.ndim != 2 or self.inputs.shape[0] == 0:
            raise ValueError("inputs must be a non-empty (n, d) matrix")
        if self.inputs.shape[1] != self.layers[0].fan_in:
            raise ValueError(
                f"model input dim {self.layers[0].fan_in} != data feature dim {self.inputs.shape[1]}")
        if self.layers[-1].fan_out != loss.output_dim:
            raise ValueError(
                f"model output dim {self.layers[-1].fan_out} != loss arity {loss.output_dim}")
        if len(targets) != self.inputs.shape[0]:
            raise ValueError("inputs and targets have different row counts")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.fan_out != b.fan_in:
                raise ValueError("consecutive layer shapes do not chain")
        self._phi = ACTIVATIONS[activation]
        offsets = np.cumsum([0] + [layer.size for layer in self.layers])
        self.offsets = tuple(int(o) for o in offsets)
        self.dim = self.offsets[-1]
        self._classification = self._detect_classification()

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    def subset(self, index) -> "NetworkObjective":
        """Same network and loss restricted to the examples in ``index``."""
        index = np.asarray(index)
        if index.size == 0:
            raise ValueError("empty batch")
        return NetworkObjective(self.layers, self.activation, self.loss,
                                self.inputs[index], self.targets[index])

    # --- parameter layout ---------------------------------------------------
    def unflatten(self, theta):
        out = []
        for layer, start in zip(self.layers, self.offsets):
            nw = layer.fan_in * layer.fan_out
            W = theta[start:start + nw].reshape(layer.fan_out, layer.fan_in)
            b = theta[start + nw:start + layer.size] if layer.bias else None
            out.append((W, b))
        return out

    def flatten(self, params) -> np.ndarray:
        parts = []
        for (W, b), layer in zip(params, self.layers):
            parts.append(np.asarray(W, dtype=np.float64).ravel())
            if layer.bias:
                parts.append(np.asarray(b, dtype=np.float64).ravel())
        return np.concatenate(parts)

    # --- passes ---------------------------------------------------------------
    def _forward(self, params, x):
        acts = [x]
        pre = []
        derivs = []
        last = len(self.layers) - 1
        for i, (layer, (W, b)) in enumerate(zip(self.layers, params)):
            z = acts[-1] @ W.T
            if layer.scale != 1.0:
                z *= layer.scale
            if b is not None:
                z += b
            pre.append(z)
            if i < last:
                a, d1, d2 = self._phi(z)
                acts.append(a)
                derivs.append((d1, d2))
        return acts, pre, derivs

    def _backward(self, params, acts, derivs, g_out):
        """Pull back an output cotangent ``g_out`` (n, k) to a flat parameter vector."""
        grads = [None] * len(self.layers)
        g = g_out
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            W, _ = params[i]
            dW = g.T @ acts[i]
            if layer.scale != 1.0:
                dW *= layer.scale
            grads[i] = (dW, g.sum(axis=0) if layer.bias else None)
            if i > 0:
                ga = g @ W
                if layer.scale != 1.0:
                    ga *= layer.scale
                g = ga * derivs[i - 1][0]
        return self.flatten(grads)

    def _tangent(self, params, vparams, acts, derivs):
        """Forward-mode pass: tangents of pre-activations and activations along v."""
        racts = [None]
        rpre = []
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            W, _ = params[i]
            VW, Vb = vparams[i]
            rz = acts[i] @ VW.T
            if racts[i] is not None:
                rz += racts[i] @ W.T
            if layer.scale != 1.0:
                rz *= layer.scale
            if Vb is not None:
                rz += Vb
            rpre.append(rz)
            if i < last:
                racts.append(derivs[i][0] * rz)
        return racts, rpre

    def outputs(self, theta) -> np.ndarray:
        return self._forward(self.unflatten(theta), self.inputs)[1][-1]

    def value(self, theta) -> float:
        z = self.outputs(theta)
        return float(np.mean(L.batch_value(self.loss, z, self.targets)))

    def value_and_gradient(self, theta):
        params = self.unflatten(theta)
        acts, pre, derivs = self._forward(params, self.inputs)
        z = pre[-1]
        val = float(np.mean(L.batch_value(self.loss, z, self.targets)))
        g = L.batch_grad(self.loss, z, self.targets) / self.n
        return val, self._backward(params, acts, derivs, g)

    def gradient(self, theta) -> np.ndarray:
        return self.value_and_gradient(theta)[1]

    def evaluate_with_gradient(self, theta):
        """``(loss, accuracy, gradient)`` from a single forward/backward pass."""
        params = self.unflatten(theta)
        acts, pre, derivs = self._forward(params, self.inputs)
        z = pre[-1]
        val = float(np.mean(L.batch_value(self.loss, z, self.targets)))
        acc = float(np.mean(L.batch_correct(self.loss, z, self.targets))) if self.is_classification else None
        g = L.batch_grad(self.loss, z, self.targets) / self.n
        return val, acc, self._backward(params, acts, derivs, g)

    def hvp(self, theta, v) -> np.ndarray:
        params = self.unflatten(theta)
        vparams = self.unflatten(v)
        acts, pre, derivs = self._forward(params, self.inputs)
        racts, rpre = self._tangent(params, vparams, acts, derivs)
        n = self.n
        g = L.batch_grad(self.loss, pre[-1], self.targets) / n
        rg = L.batch_hess_apply(self.loss, pre[-1], self.targets, rpre[-1]) / n
        out = [None] * len(self.layers)
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            W, _ = params[i]
            VW, _ = vparams[i]
            rdW = rg.T @ acts[i]
            if racts[i] is not None:
                rdW += g.T @ racts[i]
            if layer.scale != 1.0:
                rdW *= layer.scale
            out[i] = (rdW, rg.sum(axis=0) if layer.bias else None)
            if i > 0:
                ga = g @ W
                rga = rg @ W + g @ VW
                if layer.scale != 1.0:
                    ga *= layer.scale
                    rga *= layer.scale
                d1, d2 = derivs[i - 1]
                rg = rga * d1 + ga * d2 * rpre[i - 1]
                g = ga * d1
        return self.flatten(out)

    def jvp(self, theta, v) -> np.ndarray:
        """Output tangents ``J_i v`` for every example, shape (n, k)."""
        params = self.unflatten(theta)
        acts, _, derivs = self._forward(params, self.inputs)
        return self._tangent(params, self.unflatten(v), acts, derivs)[1][-1]

    def vjp(self, theta, cotangent) -> np.ndarray:
        """``sum_i J_i^T u_i`` for output cotangents ``u`` of shape (n, k)."""
        params = self.unflatten(theta)
        acts, _, derivs = self._forward(params, self.inputs)
        return self._backward(params, acts, derivs, np.asarray(cotangent, dtype=np.float64))

    def gn_product(self, theta, v, with_loss_hessian: bool = True) -> np.ndarray:
        """``(1/n) sum_i J_i^T W_i J_i v`` with ``W_i`` the loss Hessian or the identity."""
        params = self.unflatten(theta)
        acts, pre, derivs = self._forward(params, self.inputs)
        jv = self._tangent(params, self.unflatten(v), acts, derivs)[1][-1]
        if with_loss_hessian:
            jv = L.batch_hess_apply(self.loss, pre[-1], self.targets, jv)
        return self._backward(params, acts, derivs, jv / self.n)

    def accuracy(self, theta) -> float | None:
        return self.evaluate(theta)[1]

    def evaluate(self, theta):
        z = self.outputs(theta)
        val = float(np.mean(L.batch_value(self.loss, z, self.targets)))
        if not self.is_classification:
            return val, None
        return val, float(np.mean(L.batch_correct(self.loss, z, self.targets)))

    @property
    def is_classification(self) -> bool:
        return self._classification

    def _detect_classification(self) -> bool:
        if self.loss.kind != "mse":
            return True
        t = self.targets
        return bool(t.shape[1] > 1 and np.all((t == 0.0) | (t == 1.0)) and np.all(t.sum(axis=1) == 1.0))

    def margins(self, theta) -> np.ndarray:
        return L.batch_margin(self.loss, self.outputs(theta), self.targets)

    def loss_hessian_scalars(self, theta) -> np.ndarray:
        return L.batch_hess_scalars(self.loss, self.outputs(theta), self.targets)

    def preactivations(self, theta) -> list[np.ndarray]:
        """Hidden-layer pre-activations (used to keep probes away from kinks)."""
        return self._forward(self.unflatten(theta), self.inputs)[1][:-1]
