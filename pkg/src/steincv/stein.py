"""Stein control variates ``g(x) = lap phi(x) + <grad log pi(x), grad phi(x)>``.

Any object with ``value``, ``gradient`` and ``laplacian`` methods accepting a
point ``(d,)`` or a batch ``(n, d)`` can serve as ``phi``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Protocol, Sequence

import numpy as np

from .errors import ConfigurationError, NumericError
from .specvar import SpectralVarianceEstimator, toeplitz_apply
from .targets import TargetDistribution

MAX_POLY_DEGREE = 4


class PhiFunction(Protocol):
    def value(self, x): ...

    def gradient(self, x): ...

    def laplacian(self, x): ...


def stein_from_derivatives(grad_phi: np.ndarray, lap_phi: np.ndarray,
                           grad_potential: np.ndarray) -> np.ndarray:
    """Stein operator from precomputed derivatives; ``grad log pi = -grad U``."""
    return lap_phi - np.sum(grad_potential * grad_phi, axis=-1)


def _stein_raw(phi: PhiFunction, x: np.ndarray, target: TargetDistribution) -> np.ndarray:
    return stein_from_derivatives(np.asarray(phi.gradient(x)), np.asarray(phi.laplacian(x)),
                                  target.grad_potential(x))


def _check_finite(out: np.ndarray, x: np.ndarray, mask=None) -> None:
    bad = ~np.isfinite(out)
    if mask is not None:
        bad &= mask
    if np.any(bad):
        point = x if x.ndim == 1 else x[np.argmax(bad)]
        raise NumericError("non-finite Stein control variate", point=point)


def stein_apply(phi: PhiFunction, x, target: TargetDistribution):
    """Evaluate the Stein control variate of ``phi`` at a point or a batch."""
    x = np.asarray(x, dtype=float)
    with np.errstate(all="ignore"):
        out = _stein_raw(phi, x, target)
    _check_finite(out, x)
    return float(out) if np.ndim(out) == 0 else out


def stein_apply_truncated(phi: PhiFunction, x, target: TargetDistribution, R: float):
    """Stein control variate restricted to the open cube ``(-R, R)^d``, zero outside.

    The whole batch is evaluated at once so that points inside the cube get
    bit-identical values to ``stein_apply`` on the same batch.
    """
    if not R > 0:
        raise ConfigurationError("truncation radius must be positive")
    x = np.asarray(x, dtype=float)
    inside = np.all(np.abs(x) < R, axis=-1)
    if x.ndim == 1:
        return stein_apply(phi, x, target) if inside else 0.0
    with np.errstate(all="ignore"):
        out = _stein_raw(phi, x, target)
    _check_finite(out, x, inside)
    return np.where(inside, out, 0.0)


def monte_carlo_zero_mean_check(phi: PhiFunction, target: TargetDistribution,
                                sampler: Callable[[np.random.Generator, int], np.ndarray],
                                m: int, seed: int = 0) -> tuple[float, float]:
    """Mean and standard error of ``g_phi`` over ``m`` i.i.d. draws from ``sampler``."""
    if m < 1:
        raise ConfigurationError("need at least one Monte Carlo draw")
    rng = np.random.default_rng(seed)
    x = np.asarray(sampler(rng, m), dtype=float)
    g = np.atleast_1d(stein_apply(phi, x, target))
    stderr = float(np.std(g, ddof=1) / math.sqrt(m)) if m > 1 else 0.0
    return float(np.mean(g)), stderr


# -- polynomial potentials ----------------------------------------------------

def monomial_exponents(dim: int, degree: int) -> np.ndarray:
    """Exponent vectors of all monomials of total degree <= ``degree``.

    Graded lexicographic order: by total degree, then lexicographically with
    ``x_1`` most significant (``1, x1, x2, x1^2, x1 x2, x2^2, ...``).
    """
    if dim < 1 or not 0 <= degree <= MAX_POLY_DEGREE:
        raise ConfigurationError(f"polynomial degree must lie in [0, {MAX_POLY_DEGREE}]",
                                 field="model.degree")
    rows = []
    for k in range(degree + 1):
        for combo in itertools.combinations_with_replacement(range(dim), k):
            e = np.zeros(dim, dtype=int)
            for i in combo:
                e[i] += 1
            rows.append(e)
    return np.array(rows, dtype=int)


def _powers(x: np.ndarray, degree: int) -> np.ndarray:
    """``x**k`` for ``k = 0..degree``, stacked on a leading axis."""
    out = np.empty((degree + 1,) + x.shape)
    out[0] = 1.0
    for k in range(1, degree + 1):
        out[k] = out[k - 1] * x
    return out


def monomial_features(x, exponents: np.ndarray):
    """Values ``(n, M)``, gradients ``(n, M, d)`` and Laplacians ``(n, M)``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n, d = x.shape
    deg = int(exponents.max(initial=0))
    pw = _powers(x, deg)  # (deg+1, n, d)
    rows = np.arange(n)[None, :, None]
    cols = np.arange(d)[None, None, :]
    e = exponents[:, None, :]
    # per-coordinate factor x_i^e and its first two derivatives, each (M, n, d)
    f0 = pw[e, rows, cols]
    f1 = np.where(e >= 1, e * pw[np.maximum(e - 1, 0), rows, cols], 0.0)
    f2 = np.where(e >= 2, e * (e - 1) * pw[np.maximum(e - 2, 0), rows, cols], 0.0)
    values = np.prod(f0, axis=-1)
    grads = np.empty(f0.shape)
    laps = np.zeros(values.shape)
    for i in range(d):
        others = np.prod(np.delete(f0, i, axis=-1), axis=-1)
        grads[..., i] = f1[..., i] * others
        laps += f2[..., i] * others
    return values.T, grads.transpose(1, 0, 2), laps.T


@dataclass(frozen=True, eq=False)
class PolynomialPhi:
    """``phi(x) = sum_m c_m x^{e_m}`` over monomials of total degree <= ``degree``."""

    dim: int
    degree: int
    coefficients: np.ndarray

    def __post_init__(self):
        exps = monomial_exponents(self.dim, self.degree)
        coef = np.array(self.coefficients, dtype=float).ravel()
        if coef.size != len(exps):
            raise ConfigurationError(
                f"degree-{self.degree} polynomial in {self.dim} variables needs {len(exps)} coefficients, "
                f"got {coef.size}")
        coef.setflags(write=False)
        object.__setattr__(self, "coefficients", coef)
        object.__setattr__(self, "_exponents", exps)

    @classmethod
    def zeros(cls, dim: int, degree: int) -> "PolynomialPhi":
        return cls(dim, degree, np.zeros(n_monomials(dim, degree)))

    @property
    def exponents(self) -> np.ndarray:
        return self._exponents

    def features(self, x):
        return monomial_features(x, self._exponents)

    def _eval(self, x, which: int):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise ConfigurationError(f"input dimension {x.shape[-1]} != {self.dim}")
        feats = self.features(x)[which]
        out = np.tensordot(feats, self.coefficients, axes=([1], [0]))
        return out[0] if x.ndim == 1 else out

    def value(self, x):
        return self._eval(x, 0)

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        g = np.einsum("nmd,m->nd", self.features(x)[1], self.coefficients)
        return g[0] if x.ndim == 1 else g

    def laplacian(self, x):
        return self._eval(x, 2)

    def parameters(self) -> list[np.ndarray]:
        return [self.coefficients.copy()]

    def with_parameters(self, params: Sequence[np.ndarray]) -> "PolynomialPhi":
        return PolynomialPhi(self.dim, self.degree, params[0])

    def stein_features(self, x, grad_potential: np.ndarray) -> np.ndarray:
        """Matrix ``G`` with ``g_phi(x_k) = G[k] @ coefficients``."""
        _, grads, laps = self.features(x)
        return laps - np.einsum("nmd,nd->nm", grads, grad_potential)

    def to_dict(self) -> dict:
        return {"family": "polynomial", "dim": self.dim, "degree": self.degree,
                "exponents": self._exponents.tolist(), "coefficients": self.coefficients.tolist()}


def n_monomials(dim: int, degree: int) -> int:
    return math.comb(dim + degree, degree)


def optimal_phi_gaussian_linear(dim: int = 1) -> PolynomialPhi:
    """``phi(x) = -x_1``: its control variate equals ``x_1`` under N(0, I)."""
    coef = np.zeros(n_monomials(dim, 1))
    coef[1] = -1.0
    return PolynomialPhi(dim, 1, coef)


def fit_polynomial_exact(states: np.ndarray, f_values: np.ndarray, grad_potential: np.ndarray,
                         degree: int, est: SpectralVarianceEstimator) -> PolynomialPhi:
    """Minimise ``V_n(f - g_phi)`` over polynomial ``phi`` in closed form.

    ``V_n(h) = c^T M c / n`` for centred ``c``, so the optimum solves
    ``G_c^T M G_c a = G_c^T M f_c``.  The constant monomial contributes a zero
    column; ``lstsq`` returns the minimum-norm solution.
    """
    states = np.asarray(states, dtype=float)
    poly = PolynomialPhi.zeros(states.shape[1], degree)
    G = poly.stein_features(states, grad_potential)
    Gc = G - G.mean(axis=0)
    fc = np.asarray(f_values, dtype=float) - np.mean(f_values)
    MG = toeplitz_apply(Gc, est)
    A = Gc.T @ MG
    rhs = MG.T @ fc
    coef, *_ = np.linalg.lstsq(0.5 * (A + A.T), rhs, rcond=None)
    return PolynomialPhi(poly.dim, degree, coef)
