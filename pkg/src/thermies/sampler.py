"""Gaussian sampling backends and the precision-limited device simulator."""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigurationError, SingularMatrixError
from .quantgrid import QuantSpec, check_strict, round_nearest
from .symcore import CovMatrix, cholesky

__all__ = [
    "SampleBatch",
    "LangevinConfig",
    "make_rng",
    "sample_exact",
    "sample_langevin",
    "device_sample",
    "BACKENDS",
    "BINARY_MAGIC",
]

BACKENDS = ("exact", "langevin")
BINARY_MAGIC = b"THRM"


def make_rng(rng=None) -> tuple[np.random.Generator, Optional[int]]:
    """Return a Generator and the integer seed it came from (if known)."""
    if isinstance(rng, np.random.Generator):
        return rng, None
    if rng is None:
        raise ConfigurationError("an explicit seed or Generator is required")
    seed = int(rng)
    return np.random.default_rng(seed), seed


@dataclass(frozen=True)
class SampleBatch:
    """N draws of a d-vector, stored row-wise."""

    data: np.ndarray
    seed: Optional[int] = None
    neighbor_index: Optional[np.ndarray] = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise ValueError("sample data must be 2-D (count, dim)")
        object.__setattr__(self, "data", data)
        if self.neighbor_index is not None:
            idx = np.asarray(self.neighbor_index, dtype=np.int64)
            if idx.shape != (data.shape[0],):
                raise ValueError("neighbor_index must have one entry per sample")
            object.__setattr__(self, "neighbor_index", idx)

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    @property
    def count(self) -> int:
        return self.data.shape[0]

    @classmethod
    def empty(cls, dim: int, seed=None) -> "SampleBatch":
        return cls(np.zeros((0, dim)), seed=seed, neighbor_index=np.zeros(0, dtype=np.int64))

    @classmethod
    def concat(cls, batches, seed=None) -> "SampleBatch":
        batches = list(batches)
        data = np.concatenate([b.data for b in batches], axis=0)
        if all(b.neighbor_index is not None for b in batches):
            idx = np.concatenate([b.neighbor_index for b in batches])
        else:
            idx = None
        return cls(data, seed=seed, neighbor_index=idx)

    def to_csv(self) -> str:
        """CSV text with header ``x0,...,x{d-1},neighbor_index``."""
        buf = io.StringIO()
        cols = [f"x{k}" for k in range(self.dim)] + ["neighbor_index"]
        buf.write(",".join(cols) + "\n")
        idx = self.neighbor_index if self.neighbor_index is not None else np.full(self.count, -1)
        for row, k in zip(self.data, idx):
            buf.write(",".join(format(float(v), ".17g") for v in row))
            buf.write(f",{int(k)}\n")
        return buf.getvalue()

    def to_bytes(self) -> bytes:
        """Little-endian binary: 16-byte header (magic, uint32 d, uint64 N), then float64 rows."""
        head = BINARY_MAGIC + struct.pack("<IQ", self.dim, self.count)
        return head + np.ascontiguousarray(self.data, dtype="<f8").tobytes()

    @classmethod
    def from_bytes(cls, raw: bytes) -> "SampleBatch":
        if raw[:4] != BINARY_MAGIC:
            raise ValueError("not a thermies sample file")
        d, n = struct.unpack("<IQ", raw[4:16])
        data = np.frombuffer(raw[16:], dtype="<f8")
        if data.size != d * n:
            raise ValueError(f"payload holds {data.size} values, header says {d}x{n}")
        return cls(data.reshape(n, d).astype(np.float64))


def sample_exact(cov: CovMatrix, n: int, rng) -> SampleBatch:
    """Draw X = L Z with L the Cholesky factor of ``cov``."""
    gen, seed = make_rng(rng)
    if not isinstance(cov, CovMatrix):
        cov = CovMatrix(cov)
    if n < 0:
        raise ValueError("n must be nonnegative")
    if n == 0:
        return SampleBatch.empty(cov.dim, seed=seed)
    L = cholesky(cov)
    z = gen.standard_normal((n, cov.dim))
    return SampleBatch(z @ L.T, seed=seed, neighbor_index=np.zeros(n, dtype=np.int64))


@dataclass(frozen=True)
class LangevinConfig:
    """Euler-Maruyama discretization of dx = -inv(cov) x dt + sqrt(2) dW.

    ``chains`` independent chains advance in lockstep; each contributes
    every ``thin``-th state after ``burn_in`` steps.
    """

    dt: float
    burn_in: int
    thin: int
    chains: int = 1

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ConfigurationError(f"dt must be positive, got {self.dt!r}")
        if self.burn_in < 0:
            raise ConfigurationError("burn_in must be nonnegative")
        if self.thin < 1:
            raise ConfigurationError("thin must be >= 1")
        if self.chains < 1:
            raise ConfigurationError("chains must be >= 1")

    @classmethod
    def default_for(cls, cov: CovMatrix, chains: int = 1) -> "LangevinConfig":
        """dt = 0.1 lambda_min; ~20 slowest relaxation times of burn-in; thin to autocorrelation < 0.1."""
        dt = 0.1 * cov.lambda_min
        slow = dt / cov.lambda_max
        burn_in = int(math.ceil(20.0 / slow))
        thin = max(1, int(math.ceil(math.log(0.1) / math.log1p(-slow))))
        return cls(dt=dt, burn_in=burn_in, thin=thin, chains=chains)


def sample_langevin(cov: CovMatrix, n: int, config: LangevinConfig | None, rng) -> SampleBatch:
    """Overdamped Langevin Monte Carlo in the potential 0.5 x^T inv(cov) x, started at 0.

    The stationary covariance of the discretized chain is
    ``cov (I - dt inv(cov) / 2)^-1``, i.e. biased by O(dt).
    """
    gen, seed = make_rng(rng)
    if not isinstance(cov, CovMatrix):
        cov = CovMatrix(cov)
    if cov.lambda_min <= cov.psd_tol:
        raise SingularMatrixError("Langevin sampling needs a strictly positive definite covariance")
    if config is None:
        config = LangevinConfig.default_for(cov)
    if config.dt >= 2.0 * cov.lambda_min:
        raise ConfigurationError(
            f"dt={config.dt:.4g} violates the stability bound dt < 2*lambda_min={2 * cov.lambda_min:.4g}"
        )
    d = cov.dim
    if n < 0:
        raise ValueError("n must be nonnegative")
    if n == 0:
        return SampleBatch.empty(d, seed=seed)
    precision = np.linalg.inv(cov.values)
    precision = (precision + precision.T) / 2.0
    drift = np.eye(d) - config.dt * precision
    noise_scale = math.sqrt(2.0 * config.dt)
    k = config.chains
    per_chain = -(-n // k)
    x = np.zeros((k, d))
    for _ in range(config.burn_in):
        x = x @ drift + noise_scale * gen.standard_normal((k, d))
    out = np.empty((per_chain, k, d))
    for s in range(per_chain):
        for _ in range(config.thin):
            x = x @ drift + noise_scale * gen.standard_normal((k, d))
        out[s] = x
    data = out.reshape(per_chain * k, d)[:n]
    return SampleBatch(data, seed=seed, neighbor_index=np.zeros(n, dtype=np.int64))


def _sample_backend(cov, n, backend, rng, langevin=None) -> SampleBatch:
    if backend == "exact":
        return sample_exact(cov, n, rng)
    if backend == "langevin":
        return sample_langevin(cov, n, langevin, rng)
    raise ConfigurationError(f"unknown backend {backend!r}; expected one of {BACKENDS}")


def device_sample(
    requested,
    spec: QuantSpec,
    n: int,
    mode: str = "strict",
    backend: str = "exact",
    rng=None,
    langevin: LangevinConfig | None = None,
) -> SampleBatch:
    """Sample the imprecise device.

    ``strict`` accepts only a representable covariance. ``round_nearest``
    rounds each entry to the closest representable value first; this is the
    unmitigated baseline.
    """
    gen, seed = make_rng(rng)
    if mode == "strict":
        check_strict(requested, spec)
        realized = requested if isinstance(requested, CovMatrix) else CovMatrix(requested)
    elif mode == "round_nearest":
        realized = CovMatrix(round_nearest(requested, spec).values)
    else:
        raise ConfigurationError(f"unknown device mode {mode!r}")
    batch = _sample_backend(realized, n, backend, gen, langevin)
    return SampleBatch(batch.data, seed=seed, neighbor_index=batch.neighbor_index)
