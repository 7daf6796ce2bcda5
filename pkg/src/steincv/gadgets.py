"""Exact ReCU networks for elementary polynomials, and a reference B-spline.

All gadgets rest on the identity ``sigma(x) - sigma(-x) = x^3`` for
``sigma(x) = max(x, 0)^3``.  Consecutive affine maps are composed, so each
gadget has a single hidden layer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, RangeError
from .neural import MultilayerPerceptron


def _net(W0, v1, W1, bias: float | None = None) -> MultilayerPerceptron:
    return MultilayerPerceptron(
        weights=(np.asarray(W0, dtype=float), np.atleast_2d(np.asarray(W1, dtype=float))),
        shifts=(np.asarray(v1, dtype=float),),
        activation="recu",
        bias=0.0 if bias is None else bias,
        use_bias=bias is not None,
    )


def _cube_units(offsets):
    """Hidden units ``sigma(+-(x + c))`` for each offset ``c``.

    Pre-activations are ``W x - v``, so ``x + c`` needs shift ``-c``.
    Returns input weights, shifts, and the +-1 pattern that recombines each
    pair into ``(x + c)^3``.
    """
    W, v, sign = [], [], []
    for c in offsets:
        W += [[1.0], [-1.0]]
        v += [-c, c]
        sign += [1.0, -1.0]
    return np.array(W), np.array(v), np.array(sign)


def make_cube_gadget() -> MultilayerPerceptron:
    """``x -> x^3`` on the whole real line."""
    return _net([[1.0], [-1.0]], [0.0, 0.0], [[1.0, -1.0]])


def make_identity_gadget() -> MultilayerPerceptron:
    """``x -> ((x+1)^3 + (x-1)^3 - 2 x^3) / 6 = x``."""
    W, v, sign = _cube_units([1.0, -1.0, 0.0])
    coef = np.repeat([1.0, 1.0, -2.0], 2) * sign / 6.0
    return _net(W, v, coef[None, :])


def make_square_gadget() -> MultilayerPerceptron:
    """``x -> ((x+1)^3 - (x-1)^3 - 2) / 6 = x^2``; the constant is the output bias."""
    W, v, sign = _cube_units([1.0, -1.0])
    coef = np.repeat([1.0, -1.0], 2) * sign / 6.0
    return _net(W, v, coef[None, :], bias=-1.0 / 3.0)


def make_square_gadget_biasfree() -> MultilayerPerceptron:
    """Square gadget without output bias.

    An extra unit with zero input weight and shift ``-1`` outputs
    ``sigma(1) = 1`` for every ``x`` and carries the constant.
    """
    W, v, sign = _cube_units([1.0, -1.0])
    coef = np.repeat([1.0, -1.0], 2) * sign / 6.0
    W = np.vstack([W, [[0.0]]])
    v = np.append(v, -1.0)
    coef = np.append(coef, -1.0 / 3.0)
    return _net(W, v, coef[None, :])


def make_product_gadget() -> MultilayerPerceptron:
    """``(x1, x2) -> x1 x2`` via ``((x1+x2)^2 - (x1-x2)^2) / 4``.

    Expanding each square with the cube identity, the constants cancel:
    ``x1 x2 = [(s+1)^3 - (s-1)^3 - (t+1)^3 + (t-1)^3] / 24`` with
    ``s = x1 + x2`` and ``t = x1 - x2``.
    """
    W, v, coef = [], [], []
    for direction, outer in (((1.0, 1.0), 1.0), ((1.0, -1.0), -1.0)):
        for c, inner in ((1.0, 1.0), (-1.0, -1.0)):
            d = np.array(direction)
            W += [d, -d]
            v += [-c, c]
            coef += [outer * inner, -outer * inner]
    return _net(np.array(W), np.array(v), np.array(coef)[None, :] / 24.0)


def verify_gadget_weight_bounds(net: MultilayerPerceptron, bound: float = 1.0) -> bool:
    """True iff every weight and shift lies in ``[-bound, bound]``."""
    return all(np.all(np.abs(a) <= bound) for a in net.weights + net.shifts)


# -- B-splines ----------------------------------------------------------------

@dataclass(frozen=True)
class KnotVector:
    """Clamped knots on [0, 1]: ``q + 1`` zeros, ``j / K`` inside, ``q + 1`` ones.

    Indexing is 1-based to match the recursion: ``knots[j]`` is ``a_j`` for
    ``j = 1 .. 2q + K + 1``.
    """

    q: int
    K: int

    def __post_init__(self):
        if self.q < 0 or self.K < 1:
            raise ConfigurationError("need q >= 0 and K >= 1")
        a = np.concatenate([np.zeros(self.q + 1), np.arange(1, self.K) / self.K,
                            np.ones(self.q + 1)])
        object.__setattr__(self, "_a", a)

    @property
    def size(self) -> int:
        return 2 * self.q + self.K + 1

    @property
    def values(self) -> np.ndarray:
        return self._a.copy()

    def __getitem__(self, j: int) -> float:
        if not 1 <= j <= self.size:
            raise RangeError(f"knot index {j} outside [1, {self.size}]")
        return float(self._a[j - 1])


def bspline_eval(j: int, m: int, knots: KnotVector, x):
    """``B_j^{m,K}(x)`` by the two-case recursion, evaluated verbatim.

    The base case is ``1 / (a_{j+1} - a_j)`` on ``[a_j, a_{j+1})``.  Each
    level is supported on the half-open ``[a_j, a_{j+m+1})``.  With this
    normalisation the functions do not sum to one.
    """
    if not 0 <= m <= knots.q:
        raise RangeError(f"order {m} outside [0, {knots.q}]")
    top = 2 * knots.q + knots.K - m
    if not 1 <= j <= top:
        raise RangeError(f"index {j} outside [1, {top}] for order {m}")
    x = np.asarray(x, dtype=float)
    out = _bspline(j, m, knots, x)
    return float(out) if out.ndim == 0 else out


def _bspline(j: int, m: int, knots: KnotVector, x: np.ndarray) -> np.ndarray:
    lo, hi = knots[j], knots[j + m + 1]
    inside = (lo < hi) & (lo <= x) & (x < hi)
    if m == 0:
        return np.where(inside, 1.0 / (hi - lo) if hi > lo else 0.0, 0.0)
    if not lo < hi:
        return np.zeros_like(x)
    left = _bspline(j, m - 1, knots, x)
    right = _bspline(j + 1, m - 1, knots, x)
    val = ((x - lo) * left + (hi - x) * right) / (hi - lo)
    return np.where(inside, val, 0.0)
