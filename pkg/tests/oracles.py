"""Independent reference computations used by the tests.

Nothing here calls the package's differentiation code: derivatives come from
central finite differences of plain function values, and the reference
forward pass re-implements the documented parameter layout with loops.
"""
import math

import numpy as np


def fd_gradient(fun, theta, rel_step=1e-4):
    """Central differences with step ``rel_step * (1 + |theta_i|)`` per coordinate."""
    theta = np.asarray(theta, dtype=np.float64)
    g = np.empty_like(theta)
    for i in range(theta.size):
        h = rel_step * (1.0 + abs(theta[i]))
        e = np.zeros_like(theta)
        e[i] = h
        g[i] = (fun(theta + e) - fun(theta - e)) / (2 * h)
    return g


def fd_hvp(grad, theta, v, eps=1e-5):
    """``(grad(theta + eps v) - grad(theta - eps v)) / (2 eps)``."""
    return (grad(theta + eps * v) - grad(theta - eps * v)) / (2 * eps)


def fd_second_diagonal(fun, theta, index, h=1e-3):
    e = np.zeros_like(theta)
    e[index] = h
    return (fun(theta + e) - 2 * fun(theta) + fun(theta - e)) / h**2


def rel_err(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


ACTS = {
    "tanh": math.tanh,
    "relu": lambda z: max(z, 0.0),
    "elu": lambda z: z if z > 0 else math.expm1(z),
    "softplus": lambda z: math.log1p(math.exp(-abs(z))) + max(z, 0.0),
    "hardtanh": lambda z: min(1.0, max(-1.0, z)),
    "identity": lambda z: z,
}


def reference_outputs(widths, activation, theta, x, bias=True, scales=None):
    """Loop-based forward pass over the layer-major, weight-then-bias layout."""
    theta = list(theta)
    pos = 0
    layers = []
    for fan_in, fan_out in zip(widths, widths[1:]):
        W = [[theta[pos + r * fan_in + c] for c in range(fan_in)] for r in range(fan_out)]
        pos += fan_in * fan_out
        b = [0.0] * fan_out
        if bias:
            b = theta[pos:pos + fan_out]
            pos += fan_out
        layers.append((W, b))
    assert pos == len(theta)
    scales = scales or [1.0] * len(layers)
    out = []
    for row in x:
        a = list(row)
        for li, (W, b) in enumerate(layers):
            z = [scales[li] * sum(w * ai for w, ai in zip(Wr, a)) + br for Wr, br in zip(W, b)]
            a = z if li == len(layers) - 1 else [ACTS[activation](v) for v in z]
        out.append(a)
    return np.array(out)


def reference_mse(outputs, targets):
    return float(np.mean([0.5 * sum((o - t) ** 2 for o, t in zip(orow, trow))
                          for orow, trow in zip(outputs, targets)]))


def reference_cross_entropy(outputs, labels):
    total = 0.0
    for z, y in zip(outputs, labels):
        m = max(z)
        total += m + math.log(sum(math.exp(v - m) for v in z)) - z[y]
    return total / len(labels)


def rk4_linear_factor(ah):
    """Amplification of one RK4 step on ``x' = -a x`` with ``ah = a * h``."""
    return 1 - ah + ah**2 / 2 - ah**3 / 6 + ah**4 / 24
