"""Fully connected networks with analytic input derivatives.

A network of depth ``L + 1`` maps ``x`` to

    W_L sigma(W_{L-1} ... sigma(W_0 x - v_1) ... - v_L) + bias

with activations applied as ``sigma(z - v)``.  Two independent routes give
input derivatives:

* single-point formulas: the gradient as a product of weight matrices and
  diagonal activation slopes, and the Hessian as a sum of rank-one terms,
  one per hidden unit;
* a batched forward-mode pass that carries each unit's value, input
  Jacobian and Laplacian through the layers in one sweep.  Its reverse pass
  (``parameter_gradient``) gives exact parameter gradients of any scalar
  loss built from the network value, input gradient and Laplacian.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, NumericError, UnsupportedActivationError

ACTIVATIONS = ("recu", "requ", "relu", "tanh")
# Highest order for which the input Laplacian is defined.
_LAPLACIAN_OK = {"recu": True, "requ": True, "relu": False, "tanh": True}


def activation_derivatives(kind: str, z: np.ndarray, order: int = 3) -> list[np.ndarray]:
    """Return ``[sigma, sigma', ..., sigma^(order)]`` evaluated at ``z``.

    Derivatives at the kink of rectified units use the one-sided value from
    the left (zero).
    """
    z = np.asarray(z, dtype=float)
    if kind == "recu":
        p = np.maximum(z, 0.0)
        out = [p**3, 3.0 * p**2, 6.0 * p, 6.0 * (z > 0)]
    elif kind == "requ":
        p = np.maximum(z, 0.0)
        out = [p**2, 2.0 * p, 2.0 * (z > 0), np.zeros_like(z)]
    elif kind == "relu":
        out = [np.maximum(z, 0.0), (z > 0).astype(float), np.zeros_like(z), np.zeros_like(z)]
    elif kind == "tanh":
        t = np.tanh(z)
        sech2 = 1.0 - t * t
        out = [t, sech2, -2.0 * t * sech2, (6.0 * t * t - 2.0) * sech2]
    else:
        raise ConfigurationError(f"unknown activation {kind!r}", field="model.activation")
    return out[: order + 1]


def activation(kind: str, z):
    return activation_derivatives(kind, z, order=0)[0]


@dataclass(frozen=True, eq=False)
class MultilayerPerceptron:
    weights: tuple[np.ndarray, ...]
    shifts: tuple[np.ndarray, ...]
    activation: str = "recu"
    bias: float = 0.0
    use_bias: bool = True
    seed: int | None = None

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}", field="model.activation")
        weights = tuple(np.array(w, dtype=float, ndmin=2) for w in self.weights)
        shifts = tuple(np.array(v, dtype=float, ndmin=1) for v in self.shifts)
        if len(weights) != len(shifts) + 1:
            raise ConfigurationError("need exactly one more weight matrix than shift vectors")
        if not shifts:
            raise ConfigurationError("network needs at least one hidden layer")
        for i, w in enumerate(weights):
            if w.ndim != 2:
                raise ConfigurationError(f"W_{i} must be a matrix")
            if i > 0 and w.shape[1] != weights[i - 1].shape[0]:
                raise ConfigurationError(f"W_{i} has {w.shape[1]} columns, expected {weights[i - 1].shape[0]}")
            if i < len(shifts) and shifts[i].shape != (w.shape[0],):
                raise ConfigurationError(f"v_{i + 1} must have length {w.shape[0]}")
        if weights[-1].shape[0] != 1:
            raise ConfigurationError("network output must be scalar")
        if not self.use_bias and self.bias != 0.0:
            raise ConfigurationError("bias given but use_bias is false")
        for a in weights + shifts:
            a.setflags(write=False)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "shifts", shifts)
        object.__setattr__(self, "bias", float(self.bias))

    @property
    def depth(self) -> int:
        """Number of hidden layers ``L``."""
        return len(self.shifts)

    @property
    def architecture(self) -> tuple[int, ...]:
        return (self.weights[0].shape[1],) + tuple(w.shape[0] for w in self.weights)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    # parameters are ordered W_0..W_L, v_1..v_L, [bias]
    def parameters(self) -> list[np.ndarray]:
        params = [w.copy() for w in self.weights] + [v.copy() for v in self.shifts]
        if self.use_bias:
            params.append(np.array([self.bias]))
        return params

    def with_parameters(self, params: Sequence[np.ndarray]) -> "MultilayerPerceptron":
        nw = len(self.weights)
        ns = len(self.shifts)
        expected = nw + ns + (1 if self.use_bias else 0)
        if len(params) != expected:
            raise ConfigurationError(f"expected {expected} parameter arrays, got {len(params)}")
        bias = float(np.asarray(params[-1]).ravel()[0]) if self.use_bias else 0.0
        return replace(self, weights=tuple(params[:nw]), shifts=tuple(params[nw:nw + ns]), bias=bias)

    # PhiFunction interface
    def value(self, x):
        return forward(self, x)

    def gradient(self, x):
        return input_gradient(self, x)

    def laplacian(self, x):
        return input_laplacian(self, x)

    def to_dict(self) -> dict:
        return {
            "architecture": list(self.architecture),
            "activation": self.activation,
            "weights": [w.tolist() for w in self.weights],
            "shifts": [v.tolist() for v in self.shifts],
            "bias": self.bias if self.use_bias else None,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MultilayerPerceptron":
        bias = data.get("bias")
        net = cls(weights=tuple(np.array(w, dtype=float) for w in data["weights"]),
                  shifts=tuple(np.array(v, dtype=float) for v in data["shifts"]),
                  activation=data["activation"],
                  bias=0.0 if bias is None else float(bias),
                  use_bias=bias is not None,
                  seed=data.get("seed"))
        if "architecture" in data and list(net.architecture) != list(data["architecture"]):
            raise ConfigurationError("checkpoint architecture does not match its weights")
        return net


def init_mlp(dim: int, widths: Sequence[int], activation: str = "recu", seed: int = 0,
             bias: bool = True) -> MultilayerPerceptron:
    """Seeded Glorot-uniform weights; shifts and output bias start at zero."""
    if dim < 1 or not widths or any(w < 1 for w in widths):
        raise ConfigurationError("architecture needs positive input dimension and widths")
    rng = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(2,)))
    sizes = [dim, *widths, 1]
    weights = []
    for p_in, p_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (p_in + p_out))
        weights.append(rng.uniform(-limit, limit, size=(p_out, p_in)))
    shifts = [np.zeros(w) for w in widths]
    return MultilayerPerceptron(tuple(weights), tuple(shifts), activation, 0.0, bias, seed)


def standardize_inputs(net: MultilayerPerceptron, mean, scale) -> MultilayerPerceptron:
    """Fold ``(x - mean) / scale`` into the first layer.

    The returned network on ``x`` equals ``net`` on the standardised input, so
    a scale-free initialisation sees inputs of unit size.
    """
    mean = np.asarray(mean, dtype=float)
    scale = np.asarray(scale, dtype=float)
    if mean.shape != (net.input_dim,) or scale.shape != (net.input_dim,) or np.any(scale <= 0):
        raise ConfigurationError("standardisation needs a mean and a positive scale per input")
    W0 = net.weights[0] / scale
    v1 = net.shifts[0] + W0 @ mean
    return replace(net, weights=(W0,) + net.weights[1:], shifts=(v1,) + net.shifts[1:])


def save_checkpoint(net: MultilayerPerceptron, path: str | os.PathLike) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(net.to_dict(), indent=2) + "\n", encoding="utf-8")
    os.replace(tmp, path)


def load_checkpoint(path: str | os.PathLike) -> MultilayerPerceptron:
    return MultilayerPerceptron.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _check_input(net: MultilayerPerceptron, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim not in (1, 2) or x.shape[-1] != net.input_dim:
        raise ConfigurationError(f"input of shape {x.shape} does not match p_0={net.input_dim}")
    return x


def _require_laplacian(net: MultilayerPerceptron) -> None:
    if not _LAPLACIAN_OK[net.activation]:
        raise UnsupportedActivationError(
            f"{net.activation} networks are not twice differentiable; Laplacian unavailable")


def gradient_supported(kind: str) -> bool:
    return kind in ACTIVATIONS


def laplacian_supported(kind: str) -> bool:
    return _LAPLACIAN_OK.get(kind, False)


# -- single-point derivatives -------------------------------------------------

def _preactivations(net: MultilayerPerceptron, x: np.ndarray) -> list[np.ndarray]:
    zs = []
    a = x
    for w, v in zip(net.weights[:-1], net.shifts):
        z = w @ a - v
        zs.append(z)
        a = activation(net.activation, z)
    return zs


def forward(net: MultilayerPerceptron, x):
    x = _check_input(net, x)
    a = x
    for w, v in zip(net.weights[:-1], net.shifts):
        a = activation(net.activation, a @ w.T - v)
    out = a @ net.weights[-1][0]
    if net.use_bias:
        out = out + net.bias
    return float(out) if x.ndim == 1 else out


def input_gradient(net: MultilayerPerceptron, x):
    """Gradient of the network output with respect to its input.

    A single point uses ``W_L diag(sigma'(z_L)) W_{L-1} ... diag(sigma'(z_1)) W_0``;
    for ReCU each slope factor is ``3 (z v 0)^2``.  Batches go through the
    forward-mode pass.
    """
    x = _check_input(net, x)
    if x.ndim == 2:
        return network_derivatives(net, x, order=1).grad
    zs = _preactivations(net, x)
    g = net.weights[-1]
    for w, z in zip(reversed(net.weights[:-1]), reversed(zs)):
        slope = activation_derivatives(net.activation, z, 1)[1]
        g = (g * slope) @ w
    return g[0].copy()


def input_hessian(net: MultilayerPerceptron, x) -> np.ndarray:
    """Input Hessian at a single point as a sum of rank-one unit terms.

    ``H = sum_l sum_j delta_lj sigma''(z_lj) grad z_lj grad z_lj^T`` where
    ``delta_lj`` is the sensitivity of the output to unit ``j`` of layer ``l``.
    """
    _require_laplacian(net)
    x = _check_input(net, x)
    if x.ndim != 1:
        raise ConfigurationError("input_hessian takes a single point")
    zs = _preactivations(net, x)
    derivs = [activation_derivatives(net.activation, z, 2) for z in zs]
    jac = [net.weights[0]]
    for l in range(1, net.depth):
        jac.append(net.weights[l] @ (derivs[l - 1][1][:, None] * jac[l - 1]))
    hess = np.zeros((net.input_dim, net.input_dim))
    delta = net.weights[-1][0]
    for l in reversed(range(net.depth)):
        curv = delta * derivs[l][2]
        hess += jac[l].T @ (curv[:, None] * jac[l])
        delta = (delta * derivs[l][1]) @ net.weights[l]
    return hess


def input_laplacian(net: MultilayerPerceptron, x):
    _require_laplacian(net)
    x = _check_input(net, x)
    if x.ndim == 2:
        return network_derivatives(net, x, order=2).lap
    return float(np.trace(input_hessian(net, x)))


# -- batched forward mode and its reverse pass --------------------------------

@dataclass
class _Layer:
    a_prev: np.ndarray
    J_prev: np.ndarray | None  # None stands for the identity (first layer)
    lap_prev: np.ndarray | None
    z: np.ndarray
    Jz: np.ndarray | None
    lapz: np.ndarray | None
    sq: np.ndarray | None  # sum_k Jz^2
    d: list[np.ndarray]


@dataclass
class NetworkTrace:
    """Values, input gradients and Laplacians on a batch, plus the tape."""

    value: np.ndarray
    grad: np.ndarray | None
    lap: np.ndarray | None
    order: int
    layers: list[_Layer] = field(repr=False)
    a_last: np.ndarray = field(repr=False)
    J_last: np.ndarray | None = field(repr=False)
    lap_last: np.ndarray | None = field(repr=False)


def network_derivatives(net: MultilayerPerceptron, X, order: int = 2) -> NetworkTrace:
    """Propagate value (order 0), Jacobian (1) and Laplacian (2) through the net."""
    if order >= 2:
        _require_laplacian(net)
    X = _check_input(net, X)
    X = np.atleast_2d(X)
    n, d = X.shape
    a, J, lap = X, None, None
    layers = []
    for l, (w, v) in enumerate(zip(net.weights[:-1], net.shifts)):
        z = a @ w.T - v
        Jz = lapz = sq = None
        if order >= 1:
            Jz = np.broadcast_to(w, (n,) + w.shape) if J is None else np.matmul(w, J)
        if order >= 2:
            lapz = np.zeros_like(z) if lap is None else lap @ w.T
            sq = np.einsum("nik,nik->ni", Jz, Jz) if J is not None else np.broadcast_to(
                np.sum(w * w, axis=1), z.shape)
        ds = activation_derivatives(net.activation, z, 3)
        layers.append(_Layer(a, J, lap, z, Jz, lapz, sq, ds))
        a = ds[0]
        if order >= 1:
            J = ds[1][:, :, None] * Jz
        if order >= 2:
            lap = ds[2] * sq + ds[1] * lapz
    w_out = net.weights[-1][0]
    value = a @ w_out + (net.bias if net.use_bias else 0.0)
    grad = laplacian = None
    if order >= 1:
        grad = np.einsum("j,njk->nk", w_out, J)
    if order >= 2:
        laplacian = lap @ w_out
    return NetworkTrace(value, grad, laplacian, order, layers, a, J, lap)


def parameter_gradient(net: MultilayerPerceptron, trace: NetworkTrace, d_value=None,
                       d_grad=None, d_lap=None) -> list[np.ndarray]:
    """Reverse pass: pull upstream sensitivities back to every parameter.

    ``d_value`` (n,), ``d_grad`` (n, d) and ``d_lap`` (n,) are the derivatives
    of a scalar loss with respect to the traced outputs; omitted ones are
    treated as zero.  Returns gradients in ``net.parameters()`` order.
    """
    n = trace.value.shape[0]
    if (d_grad is not None and trace.order < 1) or (d_lap is not None and trace.order < 2):
        raise ConfigurationError("trace was recorded at too low an order for this loss")
    d_value = np.zeros(n) if d_value is None else np.asarray(d_value, dtype=float)
    for arr in (d_value, d_grad, d_lap):
        if arr is not None and not np.all(np.isfinite(arr)):
            raise NumericError("non-finite upstream gradient")
    w_out = net.weights[-1][0]
    L = net.depth

    dW_out = d_value @ trace.a_last
    if d_grad is not None and trace.J_last is not None:
        dW_out = dW_out + np.einsum("nk,nik->i", d_grad, trace.J_last)
    if d_lap is not None and trace.lap_last is not None:
        dW_out = dW_out + d_lap @ trace.lap_last
    dW = [None] * (L + 1)
    dv = [None] * L
    dW[L] = dW_out[None, :]

    da = d_value[:, None] * w_out
    dJ = None if d_grad is None else d_grad[:, None, :] * w_out[None, :, None]
    dlap = None if d_lap is None else d_lap[:, None] * w_out
    for l in reversed(range(L)):
        lay = trace.layers[l]
        s1 = lay.d[1]
        dz = da * s1
        dJz = dlapz = None
        if dJ is not None:
            dJz = s1[:, :, None] * dJ
            dz = dz + np.einsum("nik,nik->ni", dJ, lay.Jz) * lay.d[2]
        if dlap is not None:
            if dJz is None:
                dJz = np.zeros(lay.Jz.shape)
            dJz = dJz + 2.0 * (dlap * lay.d[2])[:, :, None] * lay.Jz
            dlapz = dlap * s1
            dz = dz + dlap * lay.lapz * lay.d[2] + dlap * lay.sq * lay.d[3]
        w = net.weights[l]
        g = dz.T @ lay.a_prev
        if dJz is not None:
            g = g + (dJz.sum(axis=0) if lay.J_prev is None
                     else np.tensordot(dJz, lay.J_prev, axes=([0, 2], [0, 2])))
        if dlapz is not None and lay.lap_prev is not None:
            g = g + dlapz.T @ lay.lap_prev
        dW[l] = g
        dv[l] = -dz.sum(axis=0)
        if l > 0:
            da = dz @ w
            dJ = None if dJz is None else np.matmul(w.T, dJz)
            dlap = None if dlapz is None else dlapz @ w
    grads = dW + dv
    if net.use_bias:
        grads.append(np.array([d_value.sum()]))
    return grads


# -- optimiser ----------------------------------------------------------------

@dataclass(frozen=True)
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-5
    step: int = 0
    m: tuple[np.ndarray, ...] | None = None
    v: tuple[np.ndarray, ...] | None = None


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray],
              state: AdamState) -> tuple[list[np.ndarray], AdamState]:
    """Bias-corrected Adam with decoupled, multiplicative weight decay."""
    if len(params) != len(grads):
        raise ConfigurationError("parameter and gradient lists differ in length")
    m = state.m or tuple(np.zeros_like(p, dtype=float) for p in params)
    v = state.v or tuple(np.zeros_like(p, dtype=float) for p in params)
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    new_params, new_m, new_v = [], [], []
    for p, g, mi, vi in zip(params, grads, m, v):
        p = np.asarray(p, dtype=float)
        g = np.asarray(g, dtype=float)
        if p.shape != g.shape or mi.shape != p.shape:
            raise ConfigurationError(f"shape mismatch {p.shape} vs {g.shape}")
        mi = b1 * mi + (1.0 - b1) * g
        vi = b2 * vi + (1.0 - b2) * g * g
        p = p * (1.0 - state.lr * state.weight_decay)
        p = p - state.lr * (mi / c1) / (np.sqrt(vi / c2) + state.eps)
        new_params.append(p)
        new_m.append(mi)
        new_v.append(vi)
    return new_params, replace(state, step=t, m=tuple(new_m), v=tuple(new_v))
