"""Empirical spectral variance minimisation and its evaluation harness.

A control variate ``g_phi`` is fitted on one chain by minimising
``V_n(f - g_phi)``; its quality is then measured on independent test chains
by the reduction ratio ``V_n(f) / V_n(f - g_phi)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, NumericError
from .neural import (AdamState, MultilayerPerceptron, adam_step, network_derivatives,
                     parameter_gradient)
from .samplers import Chain
from .specvar import (SpectralVarianceEstimator, confidence_interval, spectral_variance,
                      spectral_variance_grad)
from .stein import PhiFunction, PolynomialPhi, stein_apply, stein_from_derivatives
from .targets import LogRegData, TargetDistribution, predictive_likelihood

log = logging.getLogger(__name__)

FUNCTIONAL_KINDS = ("coordinate_square", "coordinate", "average_test_likelihood")


@dataclass(frozen=True, eq=False)
class TargetFunctional:
    """The integrand ``f``.  ``coordinate`` is 1-based, so 2 means ``X_2``."""

    kind: str = "coordinate_square"
    coordinate: int = 2
    data: LogRegData | None = None

    def __post_init__(self):
        if self.kind not in FUNCTIONAL_KINDS:
            raise ConfigurationError(f"unknown functional {self.kind!r}", field="functional.kind")
        if self.kind == "average_test_likelihood":
            if self.data is None or self.data.Z_test_tilde is None:
                raise ConfigurationError("test-likelihood functional needs held-out data",
                                         field="functional.kind")
        elif self.coordinate < 1:
            raise ConfigurationError("coordinate index is 1-based", field="functional.coordinate")

    def __call__(self, states) -> np.ndarray:
        x = np.atleast_2d(np.asarray(states, dtype=float))
        if self.kind == "average_test_likelihood":
            return predictive_likelihood(x, self.data)
        if self.coordinate > x.shape[1]:
            raise ConfigurationError(f"coordinate {self.coordinate} exceeds dimension {x.shape[1]}",
                                     field="functional.coordinate")
        col = x[:, self.coordinate - 1]
        return col * col if self.kind == "coordinate_square" else col.copy()


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-5
    epochs: int = 500
    window: int | None = None  # contiguous minibatch length; None = full chain

    def adam_state(self) -> AdamState:
        return AdamState(lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps,
                         weight_decay=self.weight_decay)


def _states(chain) -> np.ndarray:
    return chain.states if isinstance(chain, Chain) else np.atleast_2d(np.asarray(chain, dtype=float))


def control_variate_values(phi: PhiFunction, states, target: TargetDistribution) -> np.ndarray:
    states = _states(states)
    if isinstance(phi, MultilayerPerceptron):
        tr = network_derivatives(phi, states, order=2)
        out = stein_from_derivatives(tr.grad, tr.lap, target.grad_potential(states))
        if not np.all(np.isfinite(out)):
            raise NumericError("non-finite control variate on chain",
                               point=states[np.argmax(~np.isfinite(out))])
        return out
    return np.atleast_1d(stein_apply(phi, states, target))


def esvm_loss(chain, f: TargetFunctional, phi: PhiFunction, target: TargetDistribution,
              est: SpectralVarianceEstimator) -> float:
    """``V_n`` of the residual series ``f(X_k) - g_phi(X_k)``."""
    states = _states(chain)
    return spectral_variance(f(states) - control_variate_values(phi, states, target), est)


# -- objectives ---------------------------------------------------------------

class _MLPObjective:
    def __init__(self, net: MultilayerPerceptron, states, f_values, grad_u, est):
        self.net = net
        self.states, self.f, self.grad_u, self.est = states, f_values, grad_u, est

    def __call__(self, params, sl=slice(None)):
        net = self.net.with_parameters(params)
        X, gu, fv = self.states[sl], self.grad_u[sl], self.f[sl]
        tr = network_derivatives(net, X, order=2)
        g = stein_from_derivatives(tr.grad, tr.lap, gu)
        h = fv - g
        loss = spectral_variance(h, self.est)
        if not math.isfinite(loss):
            return loss, None
        dg = -spectral_variance_grad(h, self.est)
        grads = parameter_gradient(net, tr, d_grad=-gu * dg[:, None], d_lap=dg)
        return loss, grads


class _PolynomialObjective:
    def __init__(self, poly: PolynomialPhi, states, f_values, grad_u, est):
        self.poly = poly
        self.G = poly.stein_features(states, grad_u)
        self.f, self.est = f_values, est

    def __call__(self, params, sl=slice(None)):
        G = self.G[sl]
        h = self.f[sl] - G @ params[0]
        loss = spectral_variance(h, self.est)
        if not math.isfinite(loss):
            return loss, None
        return loss, [-(G.T @ spectral_variance_grad(h, self.est))]


def _objective(model, states, f_values, grad_u, est):
    if isinstance(model, MultilayerPerceptron):
        return _MLPObjective(model, states, f_values, grad_u, est)
    if isinstance(model, PolynomialPhi):
        return _PolynomialObjective(model, states, f_values, grad_u, est)
    raise ConfigurationError(f"cannot train model of type {type(model).__name__}")


def loss_and_gradient(model, chain, f: TargetFunctional, target: TargetDistribution,
                      est: SpectralVarianceEstimator):
    """ESVM loss and its gradient with respect to ``model.parameters()``."""
    states = _states(chain)
    obj = _objective(model, states, f(states), target.grad_potential(states), est)
    return obj(model.parameters())


@dataclass
class TrainResult:
    phi: PhiFunction
    loss_trace: list[float]
    initial_loss: float
    best_loss: float
    best_epoch: int  # -1: the initial parameters were never improved on
    final_loss: float
    aborted: bool = False
    diagnostic: str | None = None


def train(chain, f: TargetFunctional, model, target: TargetDistribution,
          est: SpectralVarianceEstimator, opt: OptimizerConfig | None = None,
          epochs: int | None = None, seed: int = 0) -> TrainResult:
    """Fit ``model`` by Adam on the ESVM loss; keep the best snapshot seen.

    ``loss_trace[k]`` is the loss of the parameters entering epoch ``k``.
    After the last update the final parameters are scored as well, so the
    returned snapshot has the lowest loss among all evaluated iterates.
    """
    opt = opt or OptimizerConfig()
    epochs = opt.epochs if epochs is None else epochs
    states = _states(chain)
    n = states.shape[0]
    if n < est.b_n:
        raise ConfigurationError(f"training chain of length {n} is shorter than b_n={est.b_n}",
                                 field="estimator.b_n")
    window = opt.window
    if window is not None:
        if window < 4 * est.b_n:
            raise ConfigurationError("minibatch window must be at least 4 b_n", field="optimizer.window")
        window = min(window, n)
    obj = _objective(model, states, f(states), target.grad_potential(states), est)
    rng = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(3,)))

    def pick():
        if window is None or window >= n:
            return slice(None)
        start = int(rng.integers(0, n - window + 1))
        return slice(start, start + window)

    params = model.parameters()
    state = opt.adam_state()
    trace: list[float] = []
    best_params, best_loss, best_epoch = params, math.inf, -1
    initial_loss = math.nan
    aborted, diagnostic = False, None
    for epoch in range(epochs):
        loss, grads = obj(params, pick())
        if epoch == 0:
            initial_loss = loss
        if not math.isfinite(loss) or grads is None or not all(np.all(np.isfinite(g)) for g in grads):
            aborted = True
            diagnostic = f"non-finite loss or gradient at epoch {epoch}; kept best finite snapshot"
            log.warning(diagnostic)
            break
        trace.append(float(loss))
        if loss < best_loss:
            best_params, best_loss, best_epoch = [p.copy() for p in params], loss, epoch
        params, state = adam_step(params, grads, state)
    final_loss = math.nan
    if epochs > 0 and not aborted:
        final_loss, _ = obj(params, pick())
        if math.isfinite(final_loss) and final_loss < best_loss:
            best_params, best_loss, best_epoch = params, final_loss, epochs
    if epochs == 0:
        initial_loss = best_loss = final_loss = obj(params)[0]
        best_epoch = -1
    if best_epoch == -1 or not math.isfinite(best_loss):
        best_params = model.parameters()
    return TrainResult(model.with_parameters(best_params), trace, float(initial_loss),
                       float(best_loss), best_epoch, float(final_loss), aborted, diagnostic)


# -- evaluation ---------------------------------------------------------------

def _five_numbers(values: Sequence[float]) -> dict:
    v = np.asarray(values, dtype=float)
    q = np.percentile(v, [0, 25, 50, 75, 100])
    return dict(zip(("min", "q1", "median", "q3", "max"), (float(x) for x in q)))


@dataclass
class ChainResult:
    chain_index: int
    n: int
    V_plain: float
    V_cv: float
    pi_plain: float
    pi_cv: float
    ratio: float
    ci_plain: tuple[float, float]
    ci_cv: tuple[float, float]


@dataclass
class EsvmReport:
    chains: list[ChainResult]
    esvrr: float  # median over chains
    esvrr_mean: float
    esvrr_pooled: float
    infinite_ratio: bool
    boxplot: dict
    loss_trace: list[float] = field(default_factory=list)
    training: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    deviations: list[str] = field(default_factory=list)
    reference: dict = field(default_factory=dict)

    @property
    def n_chains(self) -> int:
        return len(self.chains)

    def to_dict(self) -> dict:
        def num(x):
            return "inf" if x == math.inf else x

        return {
            "esvrr": num(self.esvrr),
            "esvrr_aggregation": "median",
            "esvrr_mean": num(self.esvrr_mean),
            "esvrr_pooled": num(self.esvrr_pooled),
            "esvrr_infinite": self.infinite_ratio,
            "n_test_chains": self.n_chains,
            "chains": [
                {"chain_index": c.chain_index, "n": c.n, "V_plain": c.V_plain, "V_cv": c.V_cv,
                 "pi_plain": c.pi_plain, "pi_cv": c.pi_cv, "ratio": num(c.ratio),
                 "ci_plain": list(c.ci_plain), "ci_cv": list(c.ci_cv)}
                for c in self.chains
            ],
            "boxplot": self.boxplot,
            "training": self.training,
            "loss_trace": self.loss_trace,
            "deviations": self.deviations,
            "reference": self.reference,
            "config": self.config,
        }


def evaluate(test_chains: Sequence, f: TargetFunctional, phi: PhiFunction,
             target: TargetDistribution, est: SpectralVarianceEstimator,
             delta: float = 0.05) -> EsvmReport:
    """Per-chain spectral variances and means with and without the control variate."""
    if not test_chains:
        raise ConfigurationError("need at least one test chain")
    results = []
    for i, chain in enumerate(test_chains):
        states = _states(chain)
        if isinstance(chain, Chain) and chain.target_name != target.name:
            raise ConfigurationError(f"test chain {i} targets {chain.target_name!r}, not {target.name!r}")
        fv = f(states)
        h = fv - control_variate_values(phi, states, target)
        v_plain = spectral_variance(fv, est)
        v_cv = spectral_variance(h, est)
        pi_plain, pi_cv = float(np.mean(fv)), float(np.mean(h))
        ratio = v_plain / v_cv if v_cv > 0 else math.inf
        n = states.shape[0]
        results.append(ChainResult(
            chain_index=getattr(chain, "chain_index", i), n=n, V_plain=v_plain, V_cv=v_cv,
            pi_plain=pi_plain, pi_cv=pi_cv, ratio=ratio,
            ci_plain=confidence_interval(pi_plain, max(v_plain, 0.0), n, delta),
            ci_cv=confidence_interval(pi_cv, max(v_cv, 0.0), n, delta)))
    ratios = np.array([r.ratio for r in results])
    v_plain_sum = sum(r.V_plain for r in results)
    v_cv_sum = sum(r.V_cv for r in results)
    return EsvmReport(
        chains=results,
        esvrr=float(np.median(ratios)),
        esvrr_mean=float(np.mean(ratios)),
        esvrr_pooled=v_plain_sum / v_cv_sum if v_cv_sum > 0 else math.inf,
        infinite_ratio=bool(np.any(np.isinf(ratios))),
        boxplot={"plain": _five_numbers([r.pi_plain for r in results]),
                 "cv": _five_numbers([r.pi_cv for r in results])},
    )


def run_experiment(cfg, **kwargs) -> EsvmReport:
    """Run an ``ExperimentConfig`` end to end; see ``steincv.experiment``."""
    from .experiment import run_experiment as _run

    return _run(cfg, **kwargs).report
