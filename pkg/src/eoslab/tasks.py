"""Dataset generators and the CIFAR-10 binary loader."""
from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CIFAR_RECORD = 3073
CIFAR_PIXELS = 3072
# Widely used per-channel statistics of the full CIFAR-10 training set,
# on the [0, 1] pixel scale.  External constants; override through config.
CIFAR_MEAN = (0.4914, 0.4822, 0.4465)
CIFAR_STD = (0.2470, 0.2435, 0.2616)


@dataclass
class Dataset:
    """Features plus either real targets (regression) or integer labels (classification)."""

    features: np.ndarray
    targets: np.ndarray
    kind: str
    classes: int = 0
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise ValueError("features must be a non-empty (n, d) matrix")
        if self.kind not in ("regression", "classification"):
            raise ValueError(f"unknown dataset kind {self.kind!r}")
        if len(self.targets) != self.features.shape[0]:
            raise ValueError("feature and target row counts differ")
        if self.kind == "regression":
            t = np.asarray(self.targets, dtype=np.float64)
            self.targets = t[:, None] if t.ndim == 1 else t
        else:
            self.targets = np.asarray(self.targets, dtype=np.int64)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            tcols = ["label"] if self.kind == "classification" else [
                f"y{j}" for j in range(self.targets.shape[1])]
            w.writerow([f"x{j}" for j in range(self.d)] + tcols)
            for x, t in zip(self.features, self.targets):
                w.writerow([repr(float(v)) for v in x] + (
                    [int(t)] if self.kind == "classification" else [repr(float(v)) for v in t]))


def chebyshev_polynomial(degree: int, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    prev, cur = np.ones_like(x), x.copy()
    if degree == 0:
        return prev
    for _ in range(degree - 1):
        prev, cur = cur, 2.0 * x * cur - prev
    return cur


def chebyshev_dataset(degree: int, points: int = 20) -> Dataset:
    """``points`` evenly spaced inputs on [-1, 1] labelled by ``T_degree``."""
    if degree < 1:
        raise ValueError("degree must be >= 1")
    x = -1.0 + 2.0 * np.arange(points) / (points - 1)
    return Dataset(x[:, None], chebyshev_polynomial(degree, x), "regression",
                   provenance={"generator": "chebyshev", "degree": degree, "points": points})


def deep_linear_dataset(n: int, d: int, seed: int = 0) -> Dataset:
    """Whitened Gaussian inputs (``X^T X / n = I``) and targets ``Y = X A^T``."""
    if n < d:
        raise ValueError(f"need n >= d to whiten (got n={n}, d={d})")
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((n, d)))
    X = np.sqrt(n) * q
    A = rng.standard_normal((d, d))
    ds = Dataset(X, X @ A.T, "regression",
                 provenance={"generator": "deep_linear", "n": n, "d": d, "seed": seed})
    ds.provenance["target_map"] = A
    return ds


def blobs_dataset(n: int, d: int, classes: int, separation: float, seed: int = 0,
                  noise: float = 1.0) -> Dataset:
    """Gaussian clusters with centres at random unit directions times ``separation``.

    Labels are balanced (``i mod classes``) and then shuffled.
    """
    if classes < 2:
        raise ValueError("classes must be >= 2")
    rng = np.random.default_rng(seed)
    centres = rng.standard_normal((classes, d))
    centres /= np.linalg.norm(centres, axis=1, keepdims=True)
    labels = rng.permutation(np.arange(n) % classes)
    X = separation * centres[labels] + noise * rng.standard_normal((n, d))
    return Dataset(X, labels, "classification", classes=classes,
                   provenance={"generator": "blobs", "n": n, "d": d, "classes": classes,
                               "separation": separation, "noise": noise, "seed": seed})


def _cifar_file(path) -> Path:
    p = Path(path)
    if p.is_dir():
        p = p / "data_batch_1.bin"
    return p


def load_cifar_subset(path, count: int = 5000, mean=CIFAR_MEAN, std=CIFAR_STD) -> Dataset:
    """First ``count`` records of a CIFAR-10 binary batch, standardized per channel.

    Each record is one label byte followed by 3072 pixel bytes (R, G, B planes
    of 32x32).  ``path`` is the batch file or a directory holding
    ``data_batch_1.bin``.
    """
    f = _cifar_file(path)
    raw = f.read_bytes()
    if len(raw) % CIFAR_RECORD:
        raise ValueError(f"{f}: size {len(raw)} is not a multiple of {CIFAR_RECORD}")
    available = len(raw) // CIFAR_RECORD
    if count > available:
        raise ValueError(f"{f}: asked for {count} records, file holds {available}")
    rec = np.frombuffer(raw, dtype=np.uint8, count=count * CIFAR_RECORD).reshape(count, CIFAR_RECORD)
    labels = rec[:, 0].astype(np.int64)
    if labels.max(initial=0) > 9:
        raise ValueError(f"{f}: label byte outside 0..9")
    pix = rec[:, 1:].astype(np.float64).reshape(count, 3, 1024) / 255.0
    pix = (pix - np.asarray(mean)[None, :, None]) / np.asarray(std)[None, :, None]
    digest = hashlib.sha256(raw).hexdigest()
    return Dataset(pix.reshape(count, CIFAR_PIXELS), labels, "classification", classes=10,
                   provenance={"generator": "cifar10", "file": str(f), "sha256": digest,
                               "count": count})
