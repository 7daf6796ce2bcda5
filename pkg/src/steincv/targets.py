"""Target distributions pi ~ exp(-U) given through their potentials.

Every potential accepts either a single point of shape ``(d,)`` or a batch of
shape ``(n, d)`` and returns a scalar or an ``(n,)`` array respectively.  The
gradients follow the same convention with a trailing ``d`` axis.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import ConfigurationError, IngestionError

DATA_DIR_ENV = "STEINCV_DATA_DIR"
PIMA_FILENAME = "pima.csv"
EIGENVALUE_FLOOR = 1e-12
_CHUNK = 4096


def _as_points(x, dim: int | None = None, min_dim: int = 1) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim not in (1, 2):
        raise ConfigurationError(f"expected a point or a batch of points, got shape {x.shape}")
    d = x.shape[-1]
    if dim is not None and d != dim:
        raise ConfigurationError(f"dimension mismatch: expected {dim}, got {d}")
    if d < min_dim:
        raise ConfigurationError(f"dimension must be at least {min_dim}, got {d}")
    return x


# -- closed-form potentials ---------------------------------------------------

def gaussian_potential(x) -> np.ndarray | float:
    x = _as_points(x)
    return 0.5 * np.sum(x * x, axis=-1)


def gaussian_grad_potential(x) -> np.ndarray:
    return np.array(_as_points(x), dtype=float, copy=True)


def funnel_potential(x, a: float = 1.0, b: float = 0.5) -> np.ndarray | float:
    """Neal's funnel: x1 ~ N(0, a), x_i | x1 ~ N(0, exp(2 b x1))."""
    x = _as_points(x, min_dim=2)
    d = x.shape[-1]
    x1 = x[..., 0]
    tail = 0.5 * np.sum(x[..., 1:] ** 2, axis=-1)
    return x1**2 / (2.0 * a) + (d - 1) * b * x1 + np.exp(-2.0 * b * x1) * tail


def funnel_grad_potential(x, a: float = 1.0, b: float = 0.5) -> np.ndarray:
    x = _as_points(x, min_dim=2)
    d = x.shape[-1]
    x1 = x[..., 0]
    scale = np.exp(-2.0 * b * x1)
    out = np.empty_like(x)
    out[..., 0] = x1 / a + (d - 1) * b - b * scale * np.sum(x[..., 1:] ** 2, axis=-1)
    out[..., 1:] = scale[..., None] * x[..., 1:]
    return out


def banana_potential(x, p: float = 20.0, b: float = 0.05) -> np.ndarray | float:
    x = _as_points(x, min_dim=2)
    x1, x2 = x[..., 0], x[..., 1]
    r = x2 + b * x1**2 - p * b
    return x1**2 / (2.0 * p) + 0.5 * r**2 + 0.5 * np.sum(x[..., 2:] ** 2, axis=-1)


def banana_grad_potential(x, p: float = 20.0, b: float = 0.05) -> np.ndarray:
    x = _as_points(x, min_dim=2)
    x1, x2 = x[..., 0], x[..., 1]
    r = x2 + b * x1**2 - p * b
    out = np.empty_like(x)
    out[..., 0] = x1 / p + 2.0 * b * x1 * r
    out[..., 1] = r
    out[..., 2:] = x[..., 2:]
    return out


# -- logistic regression ------------------------------------------------------

def whitening_transform(Z: np.ndarray, floor: float = EIGENVALUE_FLOOR) -> np.ndarray:
    """Symmetric inverse square root of ``Z^T Z`` by eigendecomposition."""
    Z = np.asarray(Z, dtype=float)
    gram = Z.T @ Z
    evals, evecs = np.linalg.eigh(0.5 * (gram + gram.T))
    evals = np.maximum(evals, floor)
    return (evecs / np.sqrt(evals)) @ evecs.T


def whiten(Z: np.ndarray, floor: float = EIGENVALUE_FLOOR) -> np.ndarray:
    """Return ``Z (Z^T Z)^{-1/2}``, whose columns are orthonormal."""
    Z = np.asarray(Z, dtype=float)
    return Z @ whitening_transform(Z, floor)


@dataclass(frozen=True, eq=False)
class LogRegData:
    """Whitened logistic-regression data under a Zellner g-prior.

    ``Z`` is the raw training design (with intercept), ``Z_tilde`` its
    whitened version; the held-out rows are whitened with the training
    transform so inner products with the whitened coefficients are preserved.
    """

    Z: np.ndarray
    Y: np.ndarray
    g: float = 100.0
    Z_test: np.ndarray | None = None
    Y_test: np.ndarray | None = None
    Z_tilde: np.ndarray = field(init=False, repr=False)
    Z_test_tilde: np.ndarray | None = field(init=False, repr=False)
    transform: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        Z = np.asarray(self.Z, dtype=float)
        Y = np.asarray(self.Y, dtype=float)
        if Z.ndim != 2 or Z.shape[0] == 0:
            raise ConfigurationError("logistic regression needs a non-empty 2-D design matrix")
        if Y.shape != (Z.shape[0],):
            raise ConfigurationError("labels must have one entry per design row")
        if not np.all((Y == 0) | (Y == 1)):
            raise ConfigurationError("labels must be 0 or 1")
        if not self.g > 0:
            raise ConfigurationError("prior scale g must be positive", field="g")
        transform = whitening_transform(Z)
        object.__setattr__(self, "Z", Z)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "transform", transform)
        object.__setattr__(self, "Z_tilde", Z @ transform)
        if self.Z_test is not None:
            Zt = np.asarray(self.Z_test, dtype=float)
            Yt = np.asarray(self.Y_test, dtype=float)
            if Zt.ndim != 2 or Zt.shape[1] != Z.shape[1] or Yt.shape != (Zt.shape[0],):
                raise ConfigurationError("test design does not match the training design")
            object.__setattr__(self, "Z_test", Zt)
            object.__setattr__(self, "Y_test", Yt)
            object.__setattr__(self, "Z_test_tilde", Zt @ transform)
        else:
            object.__setattr__(self, "Z_test_tilde", None)

    @property
    def dim(self) -> int:
        return self.Z.shape[1]

    @property
    def n_obs(self) -> int:
        return self.Z.shape[0]


def logreg_potential(x, data: LogRegData) -> np.ndarray | float:
    """Negative log-posterior of the logistic model in whitened coordinates."""
    x = _as_points(x, dim=data.dim)
    single = x.ndim == 1
    xb = np.atleast_2d(x)
    out = np.empty(xb.shape[0])
    Zt, Y = data.Z_tilde, data.Y
    for start in range(0, xb.shape[0], _CHUNK):
        blk = xb[start:start + _CHUNK]
        t = blk @ Zt.T
        loglik = t @ Y - np.sum(np.logaddexp(0.0, t), axis=-1)
        out[start:start + _CHUNK] = -loglik + np.sum(blk * blk, axis=-1) / (2.0 * data.g)
    return out[0] if single else out


def logreg_grad_potential(x, data: LogRegData) -> np.ndarray:
    x = _as_points(x, dim=data.dim)
    single = x.ndim == 1
    xb = np.atleast_2d(x)
    out = np.empty_like(xb)
    Zt, Y = data.Z_tilde, data.Y
    for start in range(0, xb.shape[0], _CHUNK):
        blk = xb[start:start + _CHUNK]
        t = blk @ Zt.T
        resid = Y - _sigmoid(t)
        out[start:start + _CHUNK] = -resid @ Zt + blk / data.g
    return out[0] if single else out


def _sigmoid(t: np.ndarray) -> np.ndarray:
    return np.exp(-np.logaddexp(0.0, -t))


def predictive_likelihood(x, data: LogRegData) -> np.ndarray | float:
    """Average predictive likelihood of the held-out rows at coefficients ``x``."""
    if data.Z_test_tilde is None:
        raise ConfigurationError("dataset has no held-out rows")
    x = _as_points(x, dim=data.dim)
    t = x @ data.Z_test_tilde.T
    loglik = data.Y_test * t - np.logaddexp(0.0, t)
    return np.mean(np.exp(loglik), axis=-1)


# -- target objects -----------------------------------------------------------

@dataclass(frozen=True)
class TargetDistribution:
    """Base class; subclasses supply ``potential`` and ``grad_potential``."""

    name: str
    dim: int
    params: Mapping[str, float] = field(default_factory=dict)

    def potential(self, x):
        raise NotImplementedError

    def grad_potential(self, x):
        raise NotImplementedError

    def grad_log_density(self, x):
        return -self.grad_potential(x)

    def unnormalized_density(self, x):
        return np.exp(-self.potential(x))


@dataclass(frozen=True)
class GaussianTarget(TargetDistribution):
    name: str = "gaussian"
    dim: int = 1

    def potential(self, x):
        return gaussian_potential(_as_points(x, dim=self.dim))

    def grad_potential(self, x):
        return gaussian_grad_potential(_as_points(x, dim=self.dim))

    def sample(self, rng: np.random.Generator, m: int) -> np.ndarray:
        return rng.standard_normal((m, self.dim))


@dataclass(frozen=True)
class FunnelTarget(TargetDistribution):
    name: str = "funnel"
    dim: int = 2
    a: float = 1.0
    b: float = 0.5

    def __post_init__(self):
        if self.dim < 2:
            raise ConfigurationError("funnel needs d >= 2", field="dim")
        if not (self.a > 0 and self.b > 0):
            raise ConfigurationError("funnel parameters must be positive")
        object.__setattr__(self, "params", {"a": self.a, "b": self.b})

    def potential(self, x):
        return funnel_potential(_as_points(x, dim=self.dim), self.a, self.b)

    def grad_potential(self, x):
        return funnel_grad_potential(_as_points(x, dim=self.dim), self.a, self.b)


@dataclass(frozen=True)
class BananaTarget(TargetDistribution):
    name: str = "banana"
    dim: int = 6
    p: float = 20.0
    b: float = 0.05

    def __post_init__(self):
        if self.dim < 2:
            raise ConfigurationError("banana needs d >= 2", field="dim")
        if not (self.p > 0 and self.b > 0):
            raise ConfigurationError("banana parameters must be positive")
        object.__setattr__(self, "params", {"p": self.p, "b": self.b})

    def potential(self, x):
        return banana_potential(_as_points(x, dim=self.dim), self.p, self.b)

    def grad_potential(self, x):
        return banana_grad_potential(_as_points(x, dim=self.dim), self.p, self.b)


@dataclass(frozen=True, eq=False)
class LogisticRegressionTarget(TargetDistribution):
    name: str = "logreg"
    dim: int = 0
    data: LogRegData | None = None

    def __post_init__(self):
        if self.data is None:
            raise ConfigurationError("logistic regression target needs data")
        object.__setattr__(self, "dim", self.data.dim)
        object.__setattr__(self, "params", {"g": self.data.g})

    def potential(self, x):
        return logreg_potential(x, self.data)

    def grad_potential(self, x):
        return logreg_grad_potential(x, self.data)


# -- dataset ingestion --------------------------------------------------------

def resolve_data_dir(data_dir: str | os.PathLike | None = None) -> Path:
    if data_dir is not None:
        return Path(data_dir)
    env = os.environ.get(DATA_DIR_ENV)
    if env:
        return Path(env)
    return Path.cwd() / "data"


def _parse_float(text: str) -> float:
    value = float(text)
    if not math.isfinite(value):
        raise ValueError(f"non-finite value {text!r}")
    return value


def read_pima_csv(path: str | os.PathLike) -> tuple[np.ndarray, np.ndarray]:
    """Read 8 feature columns and a binary outcome; the header row is optional."""
    path = Path(path)
    if not path.is_file():
        raise IngestionError(f"dataset file not found: {path}")
    features, labels = [], []
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    for idx, row in enumerate(rows):
        if not row or all(not c.strip() for c in row):
            continue
        try:
            values = [_parse_float(c) for c in row]
        except ValueError:
            if idx == 0:
                continue  # header
            raise IngestionError("non-numeric entry", row=idx) from None
        if len(values) != 9:
            raise IngestionError(f"expected 9 columns, found {len(values)}", row=idx)
        if values[8] not in (0.0, 1.0):
            raise IngestionError(f"outcome must be 0 or 1, found {values[8]!r}", row=idx)
        features.append(values[:8])
        labels.append(values[8])
    if not features:
        raise IngestionError(f"no data rows in {path}")
    return np.array(features), np.array(labels)


def load_pima(path: str | os.PathLike, *, n_test: int = 154, seed: int = 0,
              g: float = 100.0) -> LogRegData:
    """Load the Pima diabetes table into whitened train/test designs.

    A constant intercept column is appended (d = 9).  Rows are shuffled with
    ``seed`` and the last ``n_test`` of the permutation are held out.
    """
    X, y = read_pima_csv(path)
    n = X.shape[0]
    if not 0 <= n_test < n:
        raise ConfigurationError(f"n_test must be in [0, {n}), got {n_test}", field="n_test")
    Z = np.hstack([X, np.ones((n, 1))])
    perm = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(7,))).permutation(n)
    train, test = perm[: n - n_test], perm[n - n_test:]
    return LogRegData(Z=Z[train], Y=y[train], g=g,
                      Z_test=Z[test] if n_test else None,
                      Y_test=y[test] if n_test else None)


def make_target(name: str, dim: int | None = None, params: Mapping | None = None,
                data: LogRegData | None = None) -> TargetDistribution:
    params = dict(params or {})
    if name == "gaussian":
        return GaussianTarget(dim=dim or 1)
    if name == "funnel":
        return FunnelTarget(dim=dim or 2, a=float(params.get("a", 1.0)), b=float(params.get("b", 0.5)))
    if name == "banana":
        return BananaTarget(dim=dim or 6, p=float(params.get("p", 20.0)), b=float(params.get("b", 0.05)))
    if name == "logreg":
        if data is None:
            raise ConfigurationError("logreg target needs a dataset", field="target")
        if dim is not None and dim != data.dim:
            raise ConfigurationError(f"logreg dimension is {data.dim}", field="target.dim")
        return LogisticRegressionTarget(data=data)
    raise ConfigurationError(f"unknown target {name!r}", field="target.name")
