"""Unadjusted Langevin chains and their binary on-disk format.

Random streams
--------------
Each chain owns a PCG64 generator seeded from
``SeedSequence(seed, spawn_key=(role_id, chain_index))`` with ``role_id`` 0
for training chains and 1 for test chains.  Distinct spawn keys give
statistically independent streams, so chains can be produced in any order or
in parallel and still reproduce bit for bit.
"""

from __future__ import annotations

import os
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, IngestionError, SamplerDivergenceError
from .targets import TargetDistribution

ROLE_IDS = {"train": 0, "test": 1}
CHAIN_MAGIC = b"STCV"
CHAIN_VERSION = 1
_HEADER = struct.Struct("<4sIQQ")
_NOISE_BLOCK = 4096


@dataclass(frozen=True, eq=False)
class Chain:
    states: np.ndarray
    step_size: float
    burn_in: int
    seed: int
    target_name: str
    role: str = "train"
    chain_index: int = 0

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        if states.ndim != 2 or states.shape[0] == 0:
            raise ConfigurationError(f"chain states must be a non-empty n x d matrix, got {states.shape}")
        if not np.all(np.isfinite(states)):
            raise SamplerDivergenceError("chain contains non-finite states", chain_index=self.chain_index)
        states.setflags(write=False)
        object.__setattr__(self, "states", states)

    @property
    def n(self) -> int:
        return self.states.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    def __len__(self) -> int:
        return self.n


@dataclass(frozen=True)
class SamplerConfig:
    step_size: float
    n_burn: int
    n_train: int
    n_test: int
    n_test_chains: int = 1
    seed: int = 0

    def __post_init__(self):
        if not self.step_size >= 0:
            raise ConfigurationError("step size must be non-negative", field="sampler.gamma")
        if self.n_burn < 0:
            raise ConfigurationError("burn-in must be non-negative", field="sampler.n_burn")
        if self.n_train < 1:
            raise ConfigurationError("n_train must be positive", field="sampler.n_train")
        if self.n_test < 1:
            raise ConfigurationError("n_test must be positive", field="sampler.n_test")
        if self.n_test_chains < 1:
            raise ConfigurationError("need at least one test chain", field="sampler.T")

    def length(self, role: str) -> int:
        return self.n_train if role == "train" else self.n_test


def ula_step(x, step_size: float, target: TargetDistribution, noise) -> np.ndarray:
    """One Langevin step ``x - gamma grad U(x) + sqrt(2 gamma) xi``."""
    x = np.asarray(x, dtype=float)
    noise = np.asarray(noise, dtype=float)
    if noise.shape != x.shape or x.shape[-1] != target.dim:
        raise ConfigurationError(f"state/noise shapes {x.shape}/{noise.shape} do not match d={target.dim}")
    grad = target.grad_potential(x)
    if not np.all(np.isfinite(grad)):
        raise SamplerDivergenceError("non-finite potential gradient", state=x)
    return x - step_size * grad + np.sqrt(2.0 * step_size) * noise


def chain_rng(seed: int, role: str, chain_index: int) -> np.random.Generator:
    if role not in ROLE_IDS:
        raise ConfigurationError(f"unknown chain role {role!r}")
    ss = np.random.SeedSequence(int(seed), spawn_key=(ROLE_IDS[role], int(chain_index)))
    return np.random.Generator(np.random.PCG64(ss))


def generate_chain(target: TargetDistribution, cfg: SamplerConfig, x0=None,
                   role: str = "train", chain_index: int = 0) -> Chain:
    """Run ``n_burn`` discarded ULA steps, then record the next ``n`` states."""
    d = target.dim
    x = np.zeros(d) if x0 is None else np.array(x0, dtype=float)
    if x.shape != (d,) or not np.all(np.isfinite(x)):
        raise ConfigurationError("initial state must be a finite vector of the target dimension")
    n_keep = cfg.length(role)
    total = cfg.n_burn + n_keep
    rng = chain_rng(cfg.seed, role, chain_index)
    gamma = float(cfg.step_size)
    scale = np.sqrt(2.0 * gamma)
    grad_u = target.grad_potential
    states = np.empty((n_keep, d))
    step = 0
    while step < total:
        block = rng.standard_normal((min(_NOISE_BLOCK, total - step), d)) * scale
        for xi in block:
            g = grad_u(x)
            x = x - gamma * g + xi
            if not np.all(np.isfinite(x)):
                raise SamplerDivergenceError("ULA diverged", state=x, step=step,
                                             chain_index=chain_index)
            if step >= cfg.n_burn:
                states[step - cfg.n_burn] = x
            step += 1
    return Chain(states=states, step_size=gamma, burn_in=cfg.n_burn, seed=cfg.seed,
                 target_name=target.name, role=role, chain_index=chain_index)


def _test_chain_job(args):
    target, cfg, x0, index = args
    return generate_chain(target, cfg, x0, "test", index)


def generate_test_chains(target: TargetDistribution, cfg: SamplerConfig, x0=None,
                         workers: int = 1) -> list[Chain]:
    """Produce ``cfg.n_test_chains`` independent test chains.

    With ``workers > 1`` chains are generated in worker processes; results are
    identical to the serial path because each chain has its own stream.
    """
    jobs = [(target, cfg, x0, i) for i in range(cfg.n_test_chains)]
    if workers <= 1 or len(jobs) == 1:
        return [_test_chain_job(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_test_chain_job, jobs))


# -- persistence --------------------------------------------------------------

def write_chain(path: str | os.PathLike, states: np.ndarray) -> None:
    """Write a chain as a 24-byte header followed by little-endian float64 rows."""
    states = np.ascontiguousarray(states, dtype="<f8")
    if states.ndim != 2:
        raise ConfigurationError("chain file payload must be 2-D")
    n, d = states.shape
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("wb") as fh:
        fh.write(_HEADER.pack(CHAIN_MAGIC, CHAIN_VERSION, n, d))
        fh.write(states.tobytes(order="C"))
    os.replace(tmp, path)


def read_chain(path: str | os.PathLike) -> np.ndarray:
    path = Path(path)
    with path.open("rb") as fh:
        header = fh.read(_HEADER.size)
        if len(header) != _HEADER.size:
            raise IngestionError(f"{path}: truncated chain header")
        magic, version, n, d = _HEADER.unpack(header)
        if magic != CHAIN_MAGIC:
            raise IngestionError(f"{path}: bad magic {magic!r}")
        if version != CHAIN_VERSION:
            raise IngestionError(f"{path}: unsupported chain file version {version}")
        payload = fh.read()
    if len(payload) != 8 * n * d:
        raise IngestionError(f"{path}: expected {8 * n * d} payload bytes, found {len(payload)}")
    return np.frombuffer(payload, dtype="<f8").reshape(n, d).astype(float)


def pregenerated_test_path(train_path: str | os.PathLike, index: int) -> Path:
    """Sibling file name used for the ``index``-th pregenerated test chain."""
    p = Path(train_path)
    return p.with_name(f"{p.stem}.test{index}{p.suffix}")
