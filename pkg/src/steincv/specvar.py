"""Spectral variance estimation for Markov chain averages.

The estimator truncates and weights the sample autocovariances,

    V_n(h) = sum_{|s| < b_n} w(s / b_n) rho_n(|s|),

where ``rho_n`` uses the biased ``1/n`` normalisation and the chain mean.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, RangeError

WINDOW_KINDS = ("triangular", "trapezoidal", "custom")


def triangular_window(s):
    """Bartlett kernel: ``1 - |s|`` on [-1, 1] and zero outside."""
    s = np.asarray(s, dtype=float)
    out = np.where(np.abs(s) <= 1.0, 1.0 - np.abs(s), 0.0)
    return out[()] if out.ndim == 0 else out


def trapezoidal_window(s):
    """Flat-top kernel equal to 1 on [-1/2, 1/2], linear down to 0 at +-1."""
    a = np.abs(np.asarray(s, dtype=float))
    out = np.where(a <= 0.5, 1.0, np.where(a <= 1.0, 2.0 * (1.0 - a), 0.0))
    return out[()] if out.ndim == 0 else out


@dataclass(frozen=True)
class LagWindow:
    """A symmetric lag window supported on [-1, 1].

    ``kind="custom"`` interpolates ``table`` linearly; the table lists
    ``(s, w)`` pairs for ``s`` in [0, 1] and is mirrored to negative lags.
    """

    kind: str = "triangular"
    table: tuple[tuple[float, float], ...] | None = None

    def __post_init__(self):
        if self.kind not in WINDOW_KINDS:
            raise ConfigurationError(f"unknown lag window {self.kind!r}", field="estimator.window")
        if self.kind == "custom":
            if not self.table:
                raise ConfigurationError("custom window needs a table", field="estimator.table")
            pts = np.asarray(self.table, dtype=float)
            if pts.ndim != 2 or pts.shape[1] != 2:
                raise ConfigurationError("window table must be (s, w) pairs", field="estimator.table")
            s, w = pts[:, 0], pts[:, 1]
            if np.any(np.diff(s) <= 0) or s[0] < 0 or s[-1] > 1:
                raise ConfigurationError("window table abscissae must increase within [0, 1]",
                                         field="estimator.table")
            if np.any(w < 0) or np.any(w > 1):
                raise ConfigurationError("window values must lie in [0, 1]", field="estimator.table")
            object.__setattr__(self, "table", tuple((float(a), float(b)) for a, b in pts))

    def __call__(self, s):
        if self.kind == "triangular":
            return triangular_window(s)
        if self.kind == "trapezoidal":
            return trapezoidal_window(s)
        pts = np.asarray(self.table)
        a = np.abs(np.asarray(s, dtype=float))
        out = np.where(a <= 1.0, np.interp(a, pts[:, 0], pts[:, 1], right=0.0), 0.0)
        return out[()] if out.ndim == 0 else out


@dataclass(frozen=True)
class SpectralVarianceEstimator:
    b_n: int
    window: LagWindow = field(default_factory=LagWindow)

    def __post_init__(self):
        if int(self.b_n) != self.b_n or self.b_n < 1:
            raise ConfigurationError("truncation point must be a positive integer", field="estimator.b_n")
        object.__setattr__(self, "b_n", int(self.b_n))

    def weights(self) -> np.ndarray:
        """Window weights ``w(s / b_n)`` for lags ``s = 0 .. b_n - 1``."""
        return np.asarray(self.window(np.arange(self.b_n) / self.b_n), dtype=float)

    def __call__(self, h) -> float:
        return spectral_variance(h, self)


def _series(h) -> np.ndarray:
    h = np.asarray(h, dtype=float)
    if h.ndim != 1 or h.size == 0:
        raise ConfigurationError("expected a non-empty 1-D series")
    return h


def sample_autocovariance(h, s: int) -> float:
    h = _series(h)
    n = h.size
    if not 0 <= s < n:
        raise RangeError(f"lag {s} outside [0, {n})")
    c = h - h.mean()
    return float(np.dot(c[: n - s], c[s:]) / n)


def autocovariances(h, max_lag: int) -> np.ndarray:
    """Sample autocovariances for lags ``0 .. max_lag - 1``."""
    h = _series(h)
    n = h.size
    if max_lag > n:
        raise RangeError(f"need at least {max_lag} observations, have {n}")
    c = h - h.mean()
    return np.array([np.dot(c[: n - s], c[s:]) for s in range(max_lag)]) / n


def spectral_variance(h, est: SpectralVarianceEstimator) -> float:
    h = _series(h)
    if h.size < est.b_n:
        raise RangeError(f"series of length {h.size} is shorter than b_n={est.b_n}")
    rho = autocovariances(h, est.b_n)
    w = est.weights()
    return float(w[0] * rho[0] + 2.0 * np.dot(w[1:], rho[1:]))


def lag_kernel(est: SpectralVarianceEstimator) -> np.ndarray:
    """Symmetric convolution kernel ``w(s / b_n)`` for ``s = -(b_n-1) .. b_n-1``."""
    w = est.weights()
    return np.concatenate([w[:0:-1], w])


def spectral_variance_grad(h, est: SpectralVarianceEstimator) -> np.ndarray:
    """Gradient of ``spectral_variance`` with respect to the series values.

    ``V_n = c^T M c / n`` with ``c`` the centred series and ``M`` the banded
    Toeplitz matrix of window weights; the mean subtraction projects the
    gradient onto zero-sum vectors.
    """
    h = _series(h)
    n = h.size
    if n < est.b_n:
        raise RangeError(f"series of length {n} is shorter than b_n={est.b_n}")
    c = h - h.mean()
    mc = _window_convolve(c, est)
    grad = (2.0 / n) * mc
    return grad - grad.mean()


def toeplitz_apply(G: np.ndarray, est: SpectralVarianceEstimator) -> np.ndarray:
    """Apply the window matrix ``M`` to every column of ``G``."""
    G = np.asarray(G, dtype=float)
    if G.ndim == 1:
        return _window_convolve(G, est)
    return np.column_stack([_window_convolve(G[:, j], est) for j in range(G.shape[1])])


def _window_convolve(c: np.ndarray, est: SpectralVarianceEstimator) -> np.ndarray:
    full = np.convolve(c, lag_kernel(est), mode="full")
    return full[est.b_n - 1: est.b_n - 1 + c.size]


def truncation_point(n: int, rho: float) -> int:
    """``ceil(2 log n / log(1/rho))`` for a geometric mixing rate ``rho``."""
    if not 0 < rho < 1:
        raise ConfigurationError("mixing rate must lie in (0, 1)")
    if n < 2:
        raise ConfigurationError("need n >= 2")
    return max(1, math.ceil(2.0 * math.log(n) / math.log(1.0 / rho)))


# -- normal quantiles and confidence intervals --------------------------------

# Acklam's rational approximation to the inverse normal CDF.
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def normal_quantile(p: float) -> float:
    """Standard normal quantile, accurate to ~1e-15 after one Halley step."""
    if not 0.0 < p < 1.0:
        raise ConfigurationError(f"quantile level must lie in (0, 1), got {p}")
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        x = (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    elif p <= 1.0 - _P_LOW:
        q = p - 0.5
        r = q * q
        x = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / \
            (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0)
    else:
        q = math.sqrt(-2.0 * math.log1p(-p))
        x = -(((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    # Halley refinement against the exact CDF.
    e = 0.5 * math.erfc(-x / math.sqrt(2.0)) - p
    u = e * math.sqrt(2.0 * math.pi) * math.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


def confidence_interval(estimate: float, variance: float, n: int,
                        delta: float = 0.05) -> tuple[float, float]:
    """Asymptotic ``1 - delta`` interval ``estimate -+ c sqrt(V / n)``."""
    if variance < 0:
        raise ConfigurationError(f"asymptotic variance must be non-negative, got {variance}")
    if n < 1:
        raise ConfigurationError("sample size must be positive")
    if not 0.0 < delta < 1.0:
        raise ConfigurationError("delta must lie in (0, 1)")
    half = normal_quantile(1.0 - delta / 2.0) * math.sqrt(variance / n)
    return estimate - half, estimate + half


def batch_spectral_variance(series: Sequence, est: SpectralVarianceEstimator) -> np.ndarray:
    return np.array([spectral_variance(h, est) for h in series])
