"""Ensemble-sampling error mitigation protocols and the mitigated estimator."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigurationError, EvaluationError, InfeasibleError
from .quantgrid import (
    PSD_POLICIES,
    QuantSpec,
    _snap_uniform,
    bits_to_index,
    draw_neighbors,
    enumerate_ensemble,
)
from .sampler import BACKENDS, LangevinConfig, SampleBatch, _sample_backend, make_rng
from .symcore import CovMatrix, cholesky

__all__ = [
    "MitigationPlan",
    "thermies_univariate",
    "thermies_sample",
    "thermies_repetition",
    "mitigated_estimate",
    "split_budget",
]


@dataclass(frozen=True)
class MitigationPlan:
    """M ensemble draws with n device samples from each (budget N = M n)."""

    target: CovMatrix
    spec: QuantSpec
    M: int = 1
    n: int = 1
    backend: str = "exact"
    psd_policy: str = "redraw"
    langevin: LangevinConfig | None = None

    def __post_init__(self):
        if not isinstance(self.target, CovMatrix):
            object.__setattr__(self, "target", CovMatrix(self.target))
        if self.M < 1 or self.n < 1:
            raise ConfigurationError("M and n must both be >= 1")
        if self.backend not in BACKENDS:
            raise ConfigurationError(f"backend must be one of {BACKENDS}")
        if self.psd_policy not in PSD_POLICIES:
            raise ConfigurationError(f"psd_policy must be one of {PSD_POLICIES}")

    @property
    def N(self) -> int:
        return self.M * self.n


def thermies_univariate(
    sigma2_t: float, epsilon: float, w_override: float | None = None, n: int = 1, rng=None
) -> SampleBatch:
    """Mixture of N(0, m eps) and N(0, (m+1) eps) with weights 1-w and w.

    ``m = floor(sigma2_t / eps)`` and ``w = sigma2_t / eps - m`` so that the
    mixture variance is ``(m + w) eps = sigma2_t``. ``neighbor_index`` holds
    the Bernoulli outcome of each sample.
    """
    gen, seed = make_rng(rng)
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if sigma2_t < epsilon * (1 - 1e-12):
        raise InfeasibleError(
            f"target variance {sigma2_t!r} is below the smallest realizable variance eps={epsilon!r}"
        )
    fl, r = _snap_uniform(np.array([sigma2_t], dtype=float), epsilon)
    m = int(fl[0])
    w = float(r[0]) if w_override is None else float(w_override)
    if not 0.0 <= w <= 1.0:
        raise ValueError("w_override must lie in [0, 1]")
    if n == 0:
        return SampleBatch.empty(1, seed=seed)
    bits = (gen.random(n) < w).astype(np.int64)
    z = gen.standard_normal(n)
    x = np.sqrt((m + bits) * epsilon) * z
    return SampleBatch(x.reshape(n, 1), seed=seed, neighbor_index=bits)


def _member_index(bits_row: np.ndarray) -> int:
    return bits_to_index(bits_row) if bits_row.size <= 62 else -1


def thermies_sample(plan: MitigationPlan, N: int, rng=None) -> SampleBatch:
    """Each of the N samples comes from a freshly drawn neighbor.

    Draws sharing a neighbor share one factorization; the result is i.i.d.
    from the mixture over the ensemble.
    """
    gen, seed = make_rng(rng)
    d = plan.target.dim
    if N == 0:
        return SampleBatch.empty(d, seed=seed)
    bits, mats = draw_neighbors(plan.target, plan.spec, N, gen, psd_policy=plan.psd_policy)
    data = np.empty((N, d))
    index = np.empty(N, dtype=np.int64)
    keys = {}
    for k in range(N):
        keys.setdefault(bits[k].tobytes(), []).append(k)
    for rows in keys.values():
        rows = np.asarray(rows)
        cov = mats[rows[0]]
        if plan.backend == "exact":
            L = cholesky(cov)
            data[rows] = gen.standard_normal((rows.size, d)) @ L.T
        else:
            # one independent chain per sample
            for k in rows:
                data[k] = _sample_backend(cov, 1, plan.backend, gen, plan.langevin).data[0]
        index[rows] = _member_index(bits[rows[0]])
    return SampleBatch(data, seed=seed, neighbor_index=index)


def split_budget(N: int, M: int) -> list[int]:
    """Samples per member for N total over M members; the remainder goes to the first members."""
    base, extra = divmod(N, M)
    return [base + (1 if m < extra else 0) for m in range(M)]


def thermies_repetition(plan: MitigationPlan, rng=None) -> tuple[SampleBatch, list[CovMatrix]]:
    """Draw M neighbors and n samples from each.

    Returns the pooled batch (member-major order, ``neighbor_index`` is the
    member number) and the drawn matrices.
    """
    gen, seed = make_rng(rng)
    _, mats = draw_neighbors(plan.target, plan.spec, plan.M, gen, psd_policy=plan.psd_policy)
    parts = []
    for m, cov in enumerate(mats):
        b = _sample_backend(cov, plan.n, plan.backend, gen, plan.langevin)
        parts.append(SampleBatch(b.data, neighbor_index=np.full(plan.n, m)))
    return SampleBatch.concat(parts, seed=seed), mats


def _evaluate(g, cov, label) -> np.ndarray:
    try:
        val = np.atleast_1d(np.asarray(g(cov), dtype=np.float64)).ravel()
    except (np.linalg.LinAlgError, ZeroDivisionError, FloatingPointError) as exc:
        raise EvaluationError(f"g failed on ensemble member {label}: {exc}") from exc
    if not np.all(np.isfinite(val)):
        raise EvaluationError(f"g is not finite on ensemble member {label}")
    return val


def mitigated_estimate(
    g: Callable[[CovMatrix], np.ndarray],
    target,
    spec: QuantSpec,
    mode: str = "exact",
    M: int | None = None,
    rng=None,
    psd_policy: str = "redraw",
) -> np.ndarray:
    """Weighted ensemble average of ``g``.

    ``mode="exact"`` sums ``w_b g(Sigma^b)`` over the enumerated ensemble.
    ``mode="monte_carlo"`` averages ``g`` over ``M`` i.i.d. neighbor draws.
    Vector-valued ``g`` is averaged componentwise; the result is always a
    1-D array.
    """
    t = target if isinstance(target, CovMatrix) else CovMatrix(target)
    if mode == "exact":
        ens = enumerate_ensemble(t, spec)
        acc = None
        for member in ens.members:
            val = member.weight * _evaluate(g, member.matrix, member.label)
            acc = val if acc is None else acc + val
        return acc
    if mode == "monte_carlo":
        if M is None or M < 1:
            raise ConfigurationError("monte_carlo mode needs M >= 1")
        gen, _ = make_rng(rng)
        bits, mats = draw_neighbors(t, spec, M, gen, psd_policy=psd_policy)
        acc = None
        for k, cov in enumerate(mats):
            val = _evaluate(g, cov, f"draw {k}")
            acc = val if acc is None else acc + val
        return acc / M
    raise ConfigurationError(f"unknown mode {mode!r}; expected 'exact' or 'monte_carlo'")
