"""End-to-end pipeline: target, training chain, fit, test chains, report files."""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .errors import ConfigurationError, StageError
from .esvm import EsvmReport, TargetFunctional, esvm_loss, evaluate, train
from .fileio import write_csv_atomic, write_text_atomic
from .neural import init_mlp, standardize_inputs
from .samplers import (Chain, generate_chain, generate_test_chains, pregenerated_test_path,
                       read_chain)
from .stein import PolynomialPhi, fit_polynomial_exact
from .targets import load_pima, make_target, resolve_data_dir

log = logging.getLogger(__name__)

STAGES = ("target", "sample_train", "train", "sample_test", "evaluate", "write")

GNUPLOT_SCRIPT = """\
# Box plots of the chain averages with and without the control variate.
# Usage: gnuplot boxplot.gp  (writes boxplot.png)
set terminal pngcairo size 640,480
set output 'boxplot.png'
set datafile separator ','
set style data boxplot
set style boxplot outliers pointtype 7
set style fill solid 0.25 border -1
set xtics ('plain' 1, 'cv' 2)
set xrange [0.5:2.5]
set ylabel 'pi_N'
set key off
plot 'boxplot.csv' skip 1 using (1):(strcol(2) eq 'plain' ? $3 : NaN), \\
     ''            skip 1 using (2):(strcol(2) eq 'cv' ? $3 : NaN)
"""


@dataclass
class RunArtifacts:
    report: EsvmReport
    phi: object
    files: dict = field(default_factory=dict)


class _Stage:
    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        log.info("stage %s", self.name)
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and not isinstance(exc, StageError) and isinstance(exc, Exception):
            raise StageError(self.name, exc) from exc
        return False


def build_target(cfg: ExperimentConfig, data_dir=None):
    """The target distribution and the functional ``f`` for ``cfg``."""
    t = cfg.target
    if t.name == "logreg":
        path = resolve_data_dir(data_dir) / cfg.data.file
        data = load_pima(path, n_test=cfg.data.n_test, seed=cfg.sampler.seed, g=cfg.data.g)
        target = make_target("logreg", t.dim, data=data)
        return target, TargetFunctional(cfg.functional.kind, cfg.functional.coordinate, data)
    target = make_target(t.name, t.dim, t.params)
    return target, TargetFunctional(cfg.functional.kind, cfg.functional.coordinate)


def _x0(cfg: ExperimentConfig):
    return None if cfg.sampler.x0 is None else np.asarray(cfg.sampler.x0, dtype=float)


def _chain_from_file(path: Path, cfg: ExperimentConfig, target, role: str, index: int) -> Chain:
    states = read_chain(path)
    if states.shape[1] != target.dim:
        raise ConfigurationError(f"{path}: chain dimension {states.shape[1]} != {target.dim}",
                                 field="sampler.pregenerated_chain_path")
    return Chain(states=states, step_size=cfg.sampler.gamma, burn_in=cfg.sampler.n_burn,
                 seed=cfg.sampler.seed, target_name=target.name, role=role, chain_index=index)


def training_chain(cfg: ExperimentConfig, target) -> Chain:
    path = cfg.sampler.pregenerated_chain_path
    if path:
        return _chain_from_file(Path(path), cfg, target, "train", 0)
    return generate_chain(target, cfg.sampler_config(), _x0(cfg), "train", 0)


def test_chains(cfg: ExperimentConfig, target, workers: int | None = None) -> list[Chain]:
    """Pregenerated sibling files when present, otherwise fresh ULA chains."""
    path = cfg.sampler.pregenerated_chain_path
    if path:
        files = [pregenerated_test_path(path, i) for i in range(cfg.sampler.T)]
        if all(f.is_file() for f in files):
            return [_chain_from_file(f, cfg, target, "test", i) for i, f in enumerate(files)]
        log.info("pregenerated test chains not found next to %s; generating", path)
    return generate_test_chains(target, cfg.sampler_config(), _x0(cfg),
                                workers=cfg.sampler.workers if workers is None else workers)


def initial_model(cfg: ExperimentConfig, target, chain: Chain):
    m = cfg.model
    if m.family == "polynomial":
        return PolynomialPhi.zeros(target.dim, m.degree)
    net = init_mlp(target.dim, m.widths, m.activation, cfg.sampler.seed, m.bias)
    if m.standardize:
        scale = chain.states.std(axis=0)
        scale = np.where(scale > 0, scale, 1.0)
        net = standardize_inputs(net, chain.states.mean(axis=0), scale)
    return net


def fit(cfg: ExperimentConfig, target, f: TargetFunctional, chain: Chain):
    """Fitted ``phi`` and a summary of training."""
    est = cfg.estimator_obj()
    model = initial_model(cfg, target, chain)
    if cfg.model.family == "polynomial" and cfg.model.fit == "exact":
        phi = fit_polynomial_exact(chain.states, f(chain.states), target.grad_potential(chain.states),
                                   cfg.model.degree, est)
        loss0 = esvm_loss(chain, f, model, target, est)
        loss = esvm_loss(chain, f, phi, target, est)
        return phi, [], {"method": "exact", "initial_loss": loss0, "best_loss": loss,
                         "final_loss": loss, "best_epoch": None, "epochs": 0,
                         "aborted": False, "diagnostic": None}
    res = train(chain, f, model, target, est, cfg.optimizer_config(), seed=cfg.sampler.seed)
    return res.phi, res.loss_trace, {
        "method": "adam", "initial_loss": res.initial_loss, "best_loss": res.best_loss,
        "final_loss": res.final_loss, "best_epoch": res.best_epoch,
        "epochs": cfg.optimizer.epochs, "aborted": res.aborted, "diagnostic": res.diagnostic}


def _finite_or_none(x):
    return x if x is None or not isinstance(x, float) or math.isfinite(x) else None


def run_experiment(cfg: ExperimentConfig, *, data_dir=None, output_dir=None,
                   workers: int | None = None) -> RunArtifacts:
    """Run every stage; failures surface as ``StageError`` tagged with the stage."""
    with _Stage("target"):
        target, f = build_target(cfg, data_dir)
    with _Stage("sample_train"):
        chain = training_chain(cfg, target)
    with _Stage("train"):
        phi, trace, info = fit(cfg, target, f, chain)
    with _Stage("sample_test"):
        tests = test_chains(cfg, target, workers)
    with _Stage("evaluate"):
        report = evaluate(tests, f, phi, target, cfg.estimator_obj(), cfg.delta)
    report.loss_trace = trace
    report.training = {k: _finite_or_none(v) for k, v in info.items()}
    report.training["model"] = phi.to_dict()
    echo = cfg.to_dict()
    echo.pop("output_dir", None)
    echo["sampler"].pop("pregenerated_chain_path", None)
    report.config = echo
    report.deviations = list(cfg.deviations)
    report.reference = dict(cfg.reference)
    artifacts = RunArtifacts(report, phi)
    out = output_dir if output_dir is not None else cfg.output_dir
    if out is not None:
        with _Stage("write"):
            artifacts.files = write_outputs(report, phi, Path(out))
    return artifacts


def report_json(report: EsvmReport) -> str:
    return json.dumps(report.to_dict(), indent=2, allow_nan=False) + "\n"


def write_outputs(report: EsvmReport, phi, out: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    files = {"report": write_text_atomic(out / "report.json", report_json(report))}
    rows = []
    for c in report.chains:
        rows.append((c.chain_index, "plain", c.pi_plain, c.V_plain))
        rows.append((c.chain_index, "cv", c.pi_cv, c.V_cv))
    files["boxplot"] = write_csv_atomic(out / "boxplot.csv", ("chain_index", "estimator", "pi_N", "V_n"), rows)
    files["loss"] = write_csv_atomic(out / "loss.csv", ("epoch", "loss"), enumerate(report.loss_trace))
    files["gnuplot"] = write_text_atomic(out / "boxplot.gp", GNUPLOT_SCRIPT)
    files["model"] = write_text_atomic(out / "model.json", json.dumps(phi.to_dict(), indent=2) + "\n")
    return {k: os.fspath(v) for k, v in files.items()}
