"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 configuration or usage error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .errors import ConfigurationError, SteinCVError, StageError, UnsupportedActivationError
from .neural import (ACTIVATIONS, init_mlp, input_gradient, input_laplacian, laplacian_supported,
                     network_derivatives, parameter_gradient)
from .samplers import pregenerated_test_path, write_chain

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2
GRAD_TOL, LAP_TOL, PARAM_TOL = 1e-5, 1e-4, 1e-4

log = logging.getLogger("steincv")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def _seed(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must lie in [0, 2^64)")
    return value


def _widths(text: str) -> list[int]:
    try:
        widths = [int(w) for w in text.split(",") if w.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad widths {text!r}") from None
    if not widths or any(w < 1 for w in widths):
        raise argparse.ArgumentTypeError("widths must be positive integers")
    return widths


def _common(suppress: bool) -> argparse.ArgumentParser:
    # the subcommand copies must not overwrite values given before the subcommand
    kw = {"default": argparse.SUPPRESS} if suppress else {}
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--data-dir", help="directory holding datasets (else $STEINCV_DATA_DIR)", **kw)
    common.add_argument("--out-dir", help="output directory, overrides the config", **kw)
    common.add_argument("--seed", type=_seed, help="seed, overrides the config", **kw)
    common.add_argument("-v", "--verbose", action="store_true", **kw)
    return common


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="steincv", description="Stein control variates by spectral variance minimisation.",
                parents=[_common(False)])
    common = _common(True)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", parents=[common], help="run an experiment config")
    run.add_argument("config")
    run.add_argument("--chain", help="pregenerated training chain (test chains read from siblings)")
    run.add_argument("--workers", type=int, help="processes for test-chain generation")

    sample = sub.add_parser("sample", parents=[common], help="write the chains of a config to disk")
    sample.add_argument("config")
    sample.add_argument("--out", required=True, help="training chain path; test chains go alongside")
    sample.add_argument("--train-only", action="store_true", help="skip the test chains")

    gc = sub.add_parser("gradcheck", parents=[common], help="finite-difference derivative checks")
    gc.add_argument("--activation", choices=ACTIVATIONS, default="recu")
    gc.add_argument("--dims", type=int, default=4)
    gc.add_argument("--widths", type=_widths, default=[16])
    gc.add_argument("--laplacian", action="store_true", help="require the Laplacian check")
    gc.add_argument("--points", type=int, default=5)
    return p


def _load(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config)
    return cfg.with_overrides(seed=args.seed, output_dir=args.out_dir)


def cmd_run(args) -> int:
    from .experiment import run_experiment

    cfg = _load(args)
    if args.chain:
        cfg = cfg.with_overrides(pregenerated_chain_path=args.chain)
    out = cfg.output_dir or str(Path("runs") / cfg.name)
    art = run_experiment(cfg, data_dir=args.data_dir, output_dir=out, workers=args.workers)
    rep = art.report
    print(f"{cfg.name}: ESVRR median {rep.esvrr:.4g} (mean {rep.esvrr_mean:.4g}, "
          f"pooled {rep.esvrr_pooled:.4g}) over {rep.n_chains} test chains")
    print(f"wrote {art.files['report']}")
    return EXIT_OK


def cmd_sample(args) -> int:
    from .experiment import build_target, test_chains, training_chain

    cfg = _load(args)
    target, _ = build_target(cfg, args.data_dir)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_chain(out, training_chain(cfg, target).states)
    print(f"wrote {out}")
    if not args.train_only:
        for chain in test_chains(cfg, target):
            path = pregenerated_test_path(out, chain.chain_index)
            write_chain(path, chain.states)
            print(f"wrote {path}")
    return EXIT_OK


def _rel(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12))


def gradcheck(activation: str, dims: int, widths, seed: int = 0, laplacian: bool | None = None,
              points: int = 5) -> dict:
    """Maximum relative errors of analytic derivatives against central differences."""
    if laplacian and not laplacian_supported(activation):
        raise UnsupportedActivationError(f"{activation} networks have no Laplacian")
    do_lap = laplacian_supported(activation) if laplacian is None else laplacian
    rng = np.random.default_rng(seed)
    net = init_mlp(dims, widths, activation, seed)
    net = net.with_parameters([p + 0.1 * rng.standard_normal(p.shape) for p in net.parameters()])
    X = rng.uniform(-1.0, 1.0, (points, dims))
    h1, h2 = 1e-6, 1e-4
    eye = np.eye(dims)
    g_err = l_err = 0.0
    for x in X:
        fd = np.array([(net.value(x + h1 * e) - net.value(x - h1 * e)) / (2 * h1) for e in eye])
        g_err = max(g_err, _rel(input_gradient(net, x), fd))
        if do_lap:
            fd_lap = sum((net.value(x + h2 * e) - 2 * net.value(x) + net.value(x - h2 * e)) / h2 ** 2
                         for e in eye)
            l_err = max(l_err, _rel(input_laplacian(net, x), fd_lap))
    # parameter gradient of a scalar loss touching value, gradient and (optionally) Laplacian
    order = 2 if do_lap else 1
    cv = rng.standard_normal(points)
    cg = rng.standard_normal((points, dims))
    cl = rng.standard_normal(points)

    def loss(params):
        tr = network_derivatives(net.with_parameters(params), X, order)
        out = cv @ tr.value + np.sum(cg * tr.grad)
        return out + (cl @ tr.lap if do_lap else 0.0)

    tr = network_derivatives(net, X, order)
    analytic = parameter_gradient(net, tr, cv, cg, cl if do_lap else None)
    params = net.parameters()
    p_err = 0.0
    hp = 1e-6
    for k, p in enumerate(params):
        fd = np.zeros(p.shape)
        for idx in np.ndindex(p.shape):
            plus = [q.copy() for q in params]
            minus = [q.copy() for q in params]
            plus[k][idx] += hp
            minus[k][idx] -= hp
            fd[idx] = (loss(plus) - loss(minus)) / (2 * hp)
        p_err = max(p_err, _rel(analytic[k], fd))
    return {"gradient": g_err, "laplacian": l_err if do_lap else None, "parameters": p_err}


def cmd_gradcheck(args) -> int:
    seed = 0 if args.seed is None else args.seed
    errs = gradcheck(args.activation, args.dims, args.widths, seed, args.laplacian or None, args.points)
    ok = errs["gradient"] < GRAD_TOL and errs["parameters"] < PARAM_TOL
    print(f"input gradient   max rel err {errs['gradient']:.3e} (tol {GRAD_TOL:g})")
    if errs["laplacian"] is not None:
        ok = ok and errs["laplacian"] < LAP_TOL
        print(f"input laplacian  max rel err {errs['laplacian']:.3e} (tol {LAP_TOL:g})")
    print(f"parameter grad   max rel err {errs['parameters']:.3e} (tol {PARAM_TOL:g})")
    print("OK" if ok else "FAILED")
    return EXIT_OK if ok else EXIT_RUNTIME


COMMANDS = {"run": cmd_run, "sample": cmd_sample, "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigurationError, UnsupportedActivationError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        if isinstance(exc.cause, (ConfigurationError, UnsupportedActivationError)):
            print(f"configuration error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (SteinCVError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
