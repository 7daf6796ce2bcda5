"""Experiment configuration: JSON parsing, validation and serialisation.

Every section is optional except ``target``; omitted keys take the defaults
below.  Unknown keys are rejected so that typos surface as errors naming the
offending field.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any

from .errors import ConfigurationError
from .esvm import FUNCTIONAL_KINDS, OptimizerConfig
from .neural import ACTIVATIONS, laplacian_supported
from .samplers import SamplerConfig
from .specvar import WINDOW_KINDS, LagWindow, SpectralVarianceEstimator
from .stein import MAX_POLY_DEGREE

TARGET_NAMES = ("gaussian", "funnel", "banana", "logreg")
TARGET_PARAMS = {"gaussian": (), "funnel": ("a", "b"), "banana": ("p", "b"), "logreg": ()}
DEFAULT_DIMS = {"gaussian": 1, "funnel": 2, "banana": 6, "logreg": 9}


@dataclass(frozen=True)
class TargetSection:
    name: str
    dim: int
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class DataSection:
    file: str = "pima.csv"
    n_test: int = 154
    g: float = 100.0


@dataclass(frozen=True)
class SamplerSection:
    gamma: float = 0.1
    n_burn: int = 10_000
    n_train: int = 10_000
    n_test: int = 10_000
    T: int = 10
    seed: int = 0
    x0: list | None = None
    pregenerated_chain_path: str | None = None
    workers: int = 1


@dataclass(frozen=True)
class EstimatorSection:
    window: str = "triangular"
    b_n: int = 30
    table: list | None = None


@dataclass(frozen=True)
class ModelSection:
    family: str = "mlp"
    widths: list = field(default_factory=lambda: [32])
    activation: str = "recu"
    bias: bool = True
    standardize: bool = False
    degree: int = 4
    fit: str = "adam"


@dataclass(frozen=True)
class OptimizerSection:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-5
    epochs: int = 500
    window: int | None = None


@dataclass(frozen=True)
class FunctionalSection:
    kind: str = "coordinate_square"
    coordinate: int = 2


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    target: TargetSection
    sampler: SamplerSection = field(default_factory=SamplerSection)
    estimator: EstimatorSection = field(default_factory=EstimatorSection)
    model: ModelSection = field(default_factory=ModelSection)
    optimizer: OptimizerSection = field(default_factory=OptimizerSection)
    functional: FunctionalSection = field(default_factory=FunctionalSection)
    data: DataSection | None = None
    delta: float = 0.05
    output_dir: str | None = None
    reference: dict = field(default_factory=dict)
    deviations: list = field(default_factory=list)

    # -- conversions -------------------------------------------------------

    @classmethod
    def from_dict(cls, raw: Any) -> "ExperimentConfig":
        return _parse(raw)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"invalid JSON: {exc.msg} (column {exc.colno})",
                                     line=exc.lineno) from None
        return _parse(raw)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "ExperimentConfig":
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None
        return cls.from_json(text)

    def to_dict(self) -> dict:
        out = asdict(self)
        if self.data is None:
            del out["data"]
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def with_overrides(self, *, seed: int | None = None, output_dir: str | None = None,
                       pregenerated_chain_path: str | None = None) -> "ExperimentConfig":
        cfg = self
        if seed is not None:
            cfg = replace(cfg, sampler=replace(cfg.sampler, seed=_check_seed(seed, "--seed")))
        if output_dir is not None:
            cfg = replace(cfg, output_dir=str(output_dir))
        if pregenerated_chain_path is not None:
            cfg = replace(cfg, sampler=replace(cfg.sampler,
                                               pregenerated_chain_path=str(pregenerated_chain_path)))
        return cfg

    # -- runtime objects ---------------------------------------------------

    def sampler_config(self) -> SamplerConfig:
        s = self.sampler
        return SamplerConfig(step_size=s.gamma, n_burn=s.n_burn, n_train=s.n_train,
                             n_test=s.n_test, n_test_chains=s.T, seed=s.seed)

    def estimator_obj(self) -> SpectralVarianceEstimator:
        e = self.estimator
        table = None if e.table is None else tuple(tuple(p) for p in e.table)
        return SpectralVarianceEstimator(e.b_n, LagWindow(e.window, table))

    def optimizer_config(self) -> OptimizerConfig:
        return OptimizerConfig(**asdict(self.optimizer))


# -- parsing helpers ----------------------------------------------------------


def _check_seed(value, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or not 0 <= value < 2 ** 64:
        raise ConfigurationError("seed must be an integer in [0, 2^64)", field=name)
    return value


def _as_int(value, name: str) -> int:
    if isinstance(value, bool):
        raise ConfigurationError("expected an integer, got a boolean", field=name)
    if isinstance(value, int):
        return value
    if isinstance(value, float) and math.isfinite(value) and value == int(value):
        return int(value)
    raise ConfigurationError(f"expected an integer, got {value!r}", field=name)


def _as_float(value, name: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ConfigurationError(f"expected a finite number, got {value!r}", field=name)
    return float(value)


def _as_str(value, name: str) -> str:
    if not isinstance(value, str):
        raise ConfigurationError(f"expected a string, got {value!r}", field=name)
    return value


def _as_bool(value, name: str) -> bool:
    if not isinstance(value, bool):
        raise ConfigurationError(f"expected true or false, got {value!r}", field=name)
    return value


def _section(raw, name: str, cls, readers: dict):
    """Build dataclass ``cls`` from mapping ``raw`` using per-key converters."""
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigurationError("expected an object", field=name)
    unknown = sorted(set(raw) - set(readers))
    if unknown:
        raise ConfigurationError(f"unknown key {unknown[0]!r}", field=f"{name}.{unknown[0]}")
    kwargs = {}
    for key, reader in readers.items():
        if key in raw:
            value = raw[key]
            kwargs[key] = None if value is None and reader[1] else reader[0](value, f"{name}.{key}")
    return cls(**kwargs)


def _opt(conv):
    return conv, True


def _req(conv):
    return conv, False


def _int_list(value, name: str) -> list:
    if not isinstance(value, list) or not value:
        raise ConfigurationError("expected a non-empty list of integers", field=name)
    return [_as_int(v, name) for v in value]


def _num_list(value, name: str) -> list:
    if not isinstance(value, list):
        raise ConfigurationError("expected a list of numbers", field=name)
    return [_as_float(v, name) for v in value]


def _table(value, name: str) -> list:
    if not isinstance(value, list) or not all(isinstance(p, list) and len(p) == 2 for p in value):
        raise ConfigurationError("expected a list of [s, w] pairs", field=name)
    return [[_as_float(a, name), _as_float(b, name)] for a, b in value]


def _params(value, name: str) -> dict:
    if not isinstance(value, dict):
        raise ConfigurationError("expected an object of numbers", field=name)
    return {k: _as_float(v, f"{name}.{k}") for k, v in value.items()}


def _str_list(value, name: str) -> list:
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise ConfigurationError("expected a list of strings", field=name)
    return list(value)


def _json_object(value, name: str) -> dict:
    if not isinstance(value, dict):
        raise ConfigurationError("expected an object", field=name)
    return value


_TOP_KEYS = ("name", "target", "data", "sampler", "estimator", "model", "optimizer",
             "functional", "delta", "output_dir", "reference", "deviations")


def _parse(raw) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigurationError("config must be a JSON object")
    unknown = sorted(set(raw) - set(_TOP_KEYS))
    if unknown:
        raise ConfigurationError(f"unknown key {unknown[0]!r}", field=unknown[0])
    if "target" not in raw:
        raise ConfigurationError("missing required section", field="target")

    t = raw["target"]
    if not isinstance(t, dict):
        raise ConfigurationError("expected an object", field="target")
    unknown = sorted(set(t) - {"name", "dim", "params"})
    if unknown:
        raise ConfigurationError(f"unknown key {unknown[0]!r}", field=f"target.{unknown[0]}")
    tname = _as_str(t["name"], "target.name") if "name" in t else None
    if tname not in TARGET_NAMES:
        raise ConfigurationError(f"target must be one of {', '.join(TARGET_NAMES)}", field="target.name")
    dim = _as_int(t.get("dim", DEFAULT_DIMS[tname]), "target.dim")
    params = _params(t.get("params", {}), "target.params")
    bad = sorted(set(params) - set(TARGET_PARAMS[tname]))
    if bad:
        raise ConfigurationError(f"{tname} has no parameter {bad[0]!r}", field=f"target.params.{bad[0]}")
    target = TargetSection(tname, dim, params)

    cfg = ExperimentConfig(
        name=_as_str(raw.get("name", tname), "name"),
        target=target,
        data=None if raw.get("data") is None else _section(raw["data"], "data", DataSection, {
            "file": _req(_as_str), "n_test": _req(_as_int), "g": _req(_as_float)}),
        sampler=_section(raw.get("sampler"), "sampler", SamplerSection, {
            "gamma": _req(_as_float), "n_burn": _req(_as_int), "n_train": _req(_as_int),
            "n_test": _req(_as_int), "T": _req(_as_int), "seed": _req(_check_seed),
            "x0": _opt(_num_list), "pregenerated_chain_path": _opt(_as_str),
            "workers": _req(_as_int)}),
        estimator=_section(raw.get("estimator"), "estimator", EstimatorSection, {
            "window": _req(_as_str), "b_n": _req(_as_int), "table": _opt(_table)}),
        model=_section(raw.get("model"), "model", ModelSection, {
            "family": _req(_as_str), "widths": _req(_int_list), "activation": _req(_as_str),
            "bias": _req(_as_bool), "standardize": _req(_as_bool), "degree": _req(_as_int),
            "fit": _req(_as_str)}),
        optimizer=_section(raw.get("optimizer"), "optimizer", OptimizerSection, {
            "lr": _req(_as_float), "beta1": _req(_as_float), "beta2": _req(_as_float),
            "eps": _req(_as_float), "weight_decay": _req(_as_float), "epochs": _req(_as_int),
            "window": _opt(_as_int)}),
        functional=_section(raw.get("functional"), "functional", FunctionalSection, {
            "kind": _req(_as_str), "coordinate": _req(_as_int)}),
        delta=_as_float(raw.get("delta", 0.05), "delta"),
        output_dir=None if raw.get("output_dir") is None else _as_str(raw["output_dir"], "output_dir"),
        reference=_json_object(raw.get("reference", {}), "reference"),
        deviations=_str_list(raw.get("deviations", []), "deviations"),
    )
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig) -> None:
    """Cross-field checks; raises ``ConfigurationError`` naming the field."""
    t, s, e, m, o, fn = cfg.target, cfg.sampler, cfg.estimator, cfg.model, cfg.optimizer, cfg.functional
    if t.dim < 1 or (t.name in ("funnel", "banana") and t.dim < 2):
        raise ConfigurationError(f"invalid dimension {t.dim} for {t.name}", field="target.dim")
    for k, v in t.params.items():
        if not v > 0:
            raise ConfigurationError("target parameters must be positive", field=f"target.params.{k}")
    if t.name == "logreg":
        if cfg.data is None:
            raise ConfigurationError("logistic regression needs a data section", field="data")
        if t.dim != 9:
            raise ConfigurationError("the intercept-augmented design has dimension 9", field="target.dim")
    if cfg.data is not None:
        if cfg.data.n_test < 1:
            raise ConfigurationError("need at least one held-out row", field="data.n_test")
        if not cfg.data.g > 0:
            raise ConfigurationError("prior scale must be positive", field="data.g")
    if not s.gamma > 0:
        raise ConfigurationError("step size must be positive", field="sampler.gamma")
    if s.n_burn < 0:
        raise ConfigurationError("burn-in must be non-negative", field="sampler.n_burn")
    for key in ("n_train", "n_test", "T", "workers"):
        if getattr(s, key) < 1:
            raise ConfigurationError(f"{key} must be positive", field=f"sampler.{key}")
    if s.x0 is not None and len(s.x0) != t.dim:
        raise ConfigurationError(f"initial state needs {t.dim} entries", field="sampler.x0")
    if e.window not in WINDOW_KINDS:
        raise ConfigurationError(f"window must be one of {', '.join(WINDOW_KINDS)}", field="estimator.window")
    if e.b_n < 1:
        raise ConfigurationError("b_n must be positive", field="estimator.b_n")
    if e.b_n > s.n_train:
        raise ConfigurationError(f"b_n={e.b_n} exceeds n_train={s.n_train}", field="estimator.b_n")
    if e.b_n > s.n_test:
        raise ConfigurationError(f"b_n={e.b_n} exceeds n_test={s.n_test}", field="estimator.b_n")
    cfg.estimator_obj()  # validates custom tables
    if m.family not in ("mlp", "polynomial"):
        raise ConfigurationError("family must be mlp or polynomial", field="model.family")
    if m.family == "mlp":
        if m.activation not in ACTIVATIONS:
            raise ConfigurationError(f"activation must be one of {', '.join(ACTIVATIONS)}",
                                     field="model.activation")
        if not laplacian_supported(m.activation):
            raise ConfigurationError(f"{m.activation} networks have no Laplacian", field="model.activation")
        if any(w < 1 for w in m.widths):
            raise ConfigurationError("widths must be positive", field="model.widths")
    else:
        if not 0 <= m.degree <= MAX_POLY_DEGREE:
            raise ConfigurationError(f"degree must lie in [0, {MAX_POLY_DEGREE}]", field="model.degree")
        if m.fit not in ("adam", "exact"):
            raise ConfigurationError("fit must be adam or exact", field="model.fit")
    if not o.lr > 0:
        raise ConfigurationError("learning rate must be positive", field="optimizer.lr")
    for key in ("beta1", "beta2"):
        if not 0 <= getattr(o, key) < 1:
            raise ConfigurationError(f"{key} must lie in [0, 1)", field=f"optimizer.{key}")
    if not o.eps > 0:
        raise ConfigurationError("eps must be positive", field="optimizer.eps")
    if o.weight_decay < 0:
        raise ConfigurationError("weight decay must be non-negative", field="optimizer.weight_decay")
    if o.epochs < 0:
        raise ConfigurationError("epochs must be non-negative", field="optimizer.epochs")
    if o.window is not None and o.window < 4 * e.b_n:
        raise ConfigurationError("minibatch window must be at least 4 b_n", field="optimizer.window")
    if fn.kind not in FUNCTIONAL_KINDS:
        raise ConfigurationError(f"kind must be one of {', '.join(FUNCTIONAL_KINDS)}", field="functional.kind")
    if fn.kind == "average_test_likelihood":
        if t.name != "logreg":
            raise ConfigurationError("test likelihood needs the logreg target", field="functional.kind")
    elif not 1 <= fn.coordinate <= t.dim:
        raise ConfigurationError(f"coordinate must lie in [1, {t.dim}]", field="functional.coordinate")
    if not 0 < cfg.delta < 1:
        raise ConfigurationError("delta must lie in (0, 1)", field="delta")


def bundled_config_dir() -> Path:
    return Path(__file__).with_name("configs")


def bundled_configs() -> list[Path]:
    return sorted(bundled_config_dir().glob("*.json"))
