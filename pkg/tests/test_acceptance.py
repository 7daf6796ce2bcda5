"""Acceptance criteria, one PASS/FAIL line each.

The lines are printed as the checks run and repeated in the terminal
summary.  Thresholds are fixed; a criterion that is not met fails.
"""

import json
import time

import numpy as np
import pytest
from scipy.interpolate import BSpline

from steincv.cli import main
from steincv.config import ExperimentConfig, bundled_config_dir, bundled_configs
from steincv.esvm import TargetFunctional, esvm_loss, evaluate, loss_and_gradient
from steincv.experiment import build_target, run_experiment
from steincv.experiment import test_chains as make_test_chains
from steincv.gadgets import (KnotVector, bspline_eval, make_cube_gadget, make_identity_gadget,
                             make_product_gadget, make_square_gadget, verify_gadget_weight_bounds)
from steincv.neural import forward, init_mlp, input_gradient, input_laplacian
from steincv.samplers import SamplerConfig, generate_chain
from steincv.specvar import SpectralVarianceEstimator, spectral_variance
from steincv.stein import monte_carlo_zero_mean_check, optimal_phi_gaussian_linear
from steincv.targets import make_target, resolve_data_dir

from conftest import ACCEPTANCE_LINES, central_gradient, central_laplacian, rel_err

CONFIGS = bundled_config_dir()


def verdict(criterion, title, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} [{criterion}] {title}: {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def load(name):
    return ExperimentConfig.load(CONFIGS / f"{name}.json")


def test_c01_derivative_consistency():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = {"gradient": 0.0, "laplacian": 0.0, "parameters": 0.0}
    for k in range(50):
        d = int(rng.integers(1, 10))
        width = int(rng.integers(1, 65))
        net = init_mlp(d, [width], "recu", seed=k)
        net = net.with_parameters([p + 0.3 * rng.standard_normal(p.shape) for p in net.parameters()])
        x = rng.uniform(-1, 1, d)
        worst["gradient"] = max(worst["gradient"],
                                rel_err(input_gradient(net, x), central_gradient(net.value, x, 1e-5)))
        worst["laplacian"] = max(worst["laplacian"],
                                 rel_err(input_laplacian(net, x), central_laplacian(net.value, x, 1e-4)))
        target = make_target("gaussian", d)
        chain = generate_chain(target, SamplerConfig(0.1, 50, 256, 256, 1, seed=k), None, "train", 0)
        f = TargetFunctional("coordinate_square", 1)
        est = SpectralVarianceEstimator(10)
        _, grads = loss_and_gradient(net, chain, f, target, est)
        params = net.parameters()
        # the loss is only C^1 in the parameters (sigma''' jumps), so keep the
        # step small enough that few pre-activations straddle a kink
        h = 1e-6
        for i, p in enumerate(params):
            fd = np.empty(p.shape)
            for idx in np.ndindex(p.shape):
                plus = [q.copy() for q in params]
                minus = [q.copy() for q in params]
                plus[i][idx] += h
                minus[i][idx] -= h
                fd[idx] = (esvm_loss(chain, f, net.with_parameters(plus), target, est)
                           - esvm_loss(chain, f, net.with_parameters(minus), target, est)) / (2 * h)
            worst["parameters"] = max(worst["parameters"], rel_err(grads[i], fd))
    elapsed = time.perf_counter() - t0
    ok = (worst["gradient"] < 1e-5 and worst["laplacian"] < 1e-4 and worst["parameters"] < 1e-4
          and elapsed < 60)
    verdict(1, "derivative consistency", ok,
            f"max rel err grad {worst['gradient']:.2e} (<1e-5), lap {worst['laplacian']:.2e} (<1e-4), "
            f"params {worst['parameters']:.2e} (<1e-4); {elapsed:.1f} s (<60 s)")


def test_c02_gadget_exactness():
    t0 = time.perf_counter()
    x = np.linspace(-1, 1, 1000)[:, None]
    s = x[:, 0]
    cases = [
        (make_cube_gadget(), x, s**3, np.stack([3 * s**2], 1), 6 * s),
        (make_identity_gadget(), x, s, np.ones((1000, 1)), 0 * s),
        (make_square_gadget(), x, s**2, np.stack([2 * s], 1), 2 + 0 * s),
    ]
    g = np.linspace(-1, 1, 32)
    X2 = np.stack(np.meshgrid(g, g), -1).reshape(-1, 2)
    cases.append((make_product_gadget(), X2, X2[:, 0] * X2[:, 1], X2[:, ::-1], 0 * X2[:, 0]))
    val = der = 0.0
    bounds = True
    for net, pts, f, df, lap in cases:
        val = max(val, np.max(np.abs(forward(net, pts) - f)))
        der = max(der, np.max(np.abs(input_gradient(net, pts) - df)),
                  np.max(np.abs(input_laplacian(net, pts) - lap)))
        bounds &= verify_gadget_weight_bounds(net)
    elapsed = time.perf_counter() - t0
    verdict(2, "gadget exactness", val <= 1e-12 and der <= 1e-9 and bounds and elapsed < 30,
            f"max value err {val:.1e} (<=1e-12), derivative err {der:.1e} (<=1e-9), "
            f"weight bounds {'ok' if bounds else 'violated'}; {elapsed:.2f} s")


def test_c03_sampler_calibration():
    t0 = time.perf_counter()
    target = make_target("gaussian", 1)
    chain = generate_chain(target, SamplerConfig(0.1, 10_000, 100_000, 1, 1, seed=0), None, "train", 0)
    var = float(np.var(chain.states[:, 0]))
    exact = 1 / (1 - 0.1 / 2)
    err = abs(var - exact) / exact
    elapsed = time.perf_counter() - t0
    verdict(3, "ULA calibration", err < 0.05 and elapsed < 30,
            f"variance {var:.5f} vs {exact:.5f}, rel err {err:.3f} (<0.05); {elapsed:.1f} s")


def test_c04_estimator_calibration():
    rng = np.random.default_rng(4)
    v = spectral_variance(rng.standard_normal(100_000), SpectralVarianceEstimator(23))
    hand = spectral_variance([1.0, 2.0, 3.0], SpectralVarianceEstimator(2))
    worst = np.inf
    for _ in range(1000):
        n = int(rng.integers(2, 300))
        b = int(rng.integers(1, n + 1))
        h = rng.standard_normal(n) * rng.uniform(0.01, 10)
        if rng.random() < 0.5:
            h = np.cumsum(h)
        worst = min(worst, spectral_variance(h, SpectralVarianceEstimator(b)))
    ok = 0.9 <= v <= 1.1 and abs(hand - 2 / 3) <= 1e-15 and worst >= 0
    verdict(4, "spectral variance calibration", ok,
            f"iid V_n {v:.4f} in [0.9, 1.1], [1,2,3] -> {hand!r} (2/3 to 1e-15), "
            f"min over 1000 series {worst:.2e} (>=0)")


def test_c05_zero_mean():
    target = make_target("gaussian", 2)
    kinds = ["recu", "requ", "tanh"]
    worst = 0.0
    for k in range(20):
        rng = np.random.default_rng(500 + k)
        net = init_mlp(2, [int(rng.integers(4, 33))], kinds[k % 3], seed=k)
        net = net.with_parameters([p + 0.3 * rng.standard_normal(p.shape) for p in net.parameters()])
        mean, se = monte_carlo_zero_mean_check(net, target, target.sample, 100_000, seed=k)
        worst = max(worst, abs(mean) / se)
    verdict(5, "zero-mean control variates", worst <= 4,
            f"max |mean|/stderr over 20 networks {worst:.2f} (<=4)")


def test_c06_gaussian():
    t0 = time.perf_counter()
    cfg = load("gaussian")
    target, f = build_target(cfg)
    est = cfg.estimator_obj()
    chains = make_test_chains(cfg, target)
    rep = evaluate(chains, f, optimal_phi_gaussian_linear(2), target, est)
    opt_v = max(c.V_cv for c in rep.chains)
    trained = run_experiment(cfg).report
    elapsed = time.perf_counter() - t0
    ok = opt_v < 1e-20 and trained.esvrr >= 10 and elapsed <= 300
    verdict(6, "exactly solvable Gaussian", ok,
            f"optimal phi max V_n(f-g) {opt_v:.1e} (<1e-20); trained ReCU ESVRR {trained.esvrr:.1f} (>=10); "
            f"{elapsed:.0f} s (<=300 s)")


def test_c07_funnel():
    t0 = time.perf_counter()
    recu = run_experiment(load("funnel_desk")).report
    poly = run_experiment(load("funnel_poly4_desk")).report
    elapsed = time.perf_counter() - t0
    ok = recu.esvrr >= 3 and poly.esvrr >= 1.5 and elapsed <= 900
    verdict(7, "Funnel desk scale", ok,
            f"ReCU ESVRR {recu.esvrr:.2f} (>=3), degree-4 polynomial {poly.esvrr:.2f} (>=1.5); "
            f"{elapsed:.0f} s (<=900 s)")


def test_c08_banana():
    t0 = time.perf_counter()
    cfg = load("banana_desk")
    s = cfg.sampler
    assert (s.gamma, s.n_burn, s.n_train, s.T, cfg.target.dim) == (0.01, 100_000, 20_000, 10, 6)
    rep = run_experiment(cfg).report
    elapsed = time.perf_counter() - t0
    verdict(8, "Banana desk scale", rep.esvrr >= 3 and elapsed <= 1800,
            f"ReCU ESVRR {rep.esvrr:.2f} (>=3; mean {rep.esvrr_mean:.2f}, pooled {rep.esvrr_pooled:.2f}); "
            f"{elapsed:.0f} s (<=1800 s)")


@pytest.mark.extended
@pytest.mark.slow
def test_c09_pima(request):
    def skip(reason):
        line = f"SKIP [9] Pima logistic regression: {reason}"
        ACCEPTANCE_LINES.append(line)
        pytest.skip(line)

    if not request.config.getoption("--run-extended"):
        skip("extended, pass --run-extended to include it")
    cfg = load("logreg")
    path = resolve_data_dir(None) / cfg.data.file
    if not path.is_file():
        skip(f"{path} not found (set STEINCV_DATA_DIR)")
    t0 = time.perf_counter()
    rep = run_experiment(cfg).report
    elapsed = time.perf_counter() - t0
    verdict(9, "Pima logistic regression", rep.esvrr >= 5 and elapsed <= 3600,
            f"Tanh ESVRR {rep.esvrr:.2f} (>=5); {elapsed:.0f} s (<=3600 s)")


def _scipy_bspline(j, m, t, x):
    lo, hi = t[j - 1], t[j + m]
    if hi <= lo:
        return np.zeros_like(x)
    c = np.zeros(len(t) - m - 1)
    c[j - 1] = 1.0
    v = np.nan_to_num(BSpline(t, c, m, extrapolate=False)(x), nan=0.0)
    return np.where((x >= lo) & (x < hi), v, 0.0) / (hi - lo)


def test_c10_bspline():
    q = 3
    err, sign_ok, support_ok = 0.0, True, True
    for K in (3, 5, 8):
        kv = KnotVector(q, K)
        t = kv.values
        x = np.random.default_rng(K).uniform(0, 1, 1000)
        probe = np.concatenate([np.linspace(-0.5, 1.5, 1001), t])
        for m in range(q + 1):
            for j in range(1, 2 * q + K - m + 1):
                err = max(err, np.max(np.abs(bspline_eval(j, m, kv, x) - _scipy_bspline(j, m, t, x))))
                b = bspline_eval(j, m, kv, probe)
                sign_ok &= bool(np.all(b >= 0))
                support_ok &= bool(np.all(b[(probe < kv[j]) | (probe >= kv[j + m + 1])] == 0))
    verdict(10, "B-spline recursion", err <= 1e-10 and sign_ok and support_ok,
            f"max err vs de Boor evaluation {err:.1e} (<=1e-10), nonnegative {sign_ok}, support {support_ok}")


def _shrunk(path, tmp_path):
    raw = json.loads(path.read_text())
    raw["sampler"].update(n_burn=200, n_train=300, n_test=300, T=2)
    raw["optimizer"]["epochs"] = 5
    out = tmp_path / path.name
    out.write_text(json.dumps(raw))
    return out


def _pima_dir(tmp_path):
    rng = np.random.default_rng(9)
    rows = ["Pregnancies,Glucose,BloodPressure,SkinThickness,Insulin,BMI,DPF,Age,Outcome"]
    for _ in range(400):
        rows.append(",".join(f"{v:.3f}" for v in rng.uniform(0, 100, 8)) + f",{int(rng.integers(0, 2))}")
    d = tmp_path / "data"
    d.mkdir()
    (d / "pima.csv").write_text("\n".join(rows) + "\n")
    return d


def test_c11_determinism(tmp_path):
    data = _pima_dir(tmp_path)
    runs = [(CONFIGS / "gaussian_smoke.json", "as shipped"),
            (CONFIGS / "funnel_poly4_exact_desk.json", "as shipped")]
    runs += [(_shrunk(p, tmp_path), "reduced lengths") for p in bundled_configs()]
    mismatched = []
    for path, _ in runs:
        reports = []
        for rep in ("a", "b"):
            out = tmp_path / "out" / path.stem / rep
            code = main(["run", str(path), "--data-dir", str(data), "--out-dir", str(out)])
            assert code == 0, path
            reports.append((out / "report.json").read_bytes())
        if reports[0] != reports[1]:
            mismatched.append(path.stem)
    verdict(11, "end-to-end determinism", not mismatched,
            f"{len(runs)} config runs repeated, byte-identical report.json for "
            f"{len(runs) - len(mismatched)} (mismatches: {mismatched or 'none'})")
