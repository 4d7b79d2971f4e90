"""Densities, distribution distances, covariance statistics and concentration bounds."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from .errors import CapacityError, DomainError, InsufficientDataError, SingularMatrixError
from .sampler import SampleBatch, make_rng
from .symcore import CovMatrix, SymMatrix

__all__ = [
    "MixtureModel",
    "BoundReport",
    "gaussian_pdf",
    "gaussian_logpdf",
    "mixture_pdf",
    "linf_distance",
    "sample_covariance",
    "centered_covariance",
    "hoeffding_bound",
    "sbar",
    "combined_bound",
    "bound_report",
    "rms_error",
    "loglog_slope",
]


def _factor(cov: CovMatrix, label="covariance"):
    if cov.lambda_min <= cov.psd_tol:
        raise SingularMatrixError(f"{label} is singular (lambda_min={cov.lambda_min:.3g})")
    L = np.linalg.cholesky(cov.values)
    logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
    return L, logdet


def gaussian_logpdf(x, cov: CovMatrix, _label="covariance") -> np.ndarray:
    """Log density of N(0, cov) at one point (shape (d,)) or many (shape (n, d))."""
    if not isinstance(cov, CovMatrix):
        cov = CovMatrix(cov)
    L, logdet = _factor(cov, _label)
    pts = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if pts.shape[-1] != cov.dim:
        pts = pts.reshape(-1, cov.dim)
    y = solve_triangular(L, pts.T, lower=True)
    quad = np.sum(y * y, axis=0)
    return -0.5 * (quad + logdet + cov.dim * math.log(2.0 * math.pi))


def gaussian_pdf(x, cov: CovMatrix):
    """Zero-mean multivariate normal density; scalar for a single point."""
    out = np.exp(gaussian_logpdf(x, cov))
    return float(out[0]) if np.ndim(x) <= 1 else out


@dataclass(frozen=True)
class MixtureModel:
    """Zero-mean Gaussian mixture, sum_b w_b N(0, Sigma^b)."""

    weights: tuple
    covs: tuple

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 1 or w.size != len(self.covs) or w.size == 0:
            raise ValueError("need one weight per component and at least one component")
        if np.any(w < 0) or abs(float(w.sum()) - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to 1")
        covs = tuple(c if isinstance(c, CovMatrix) else CovMatrix(c) for c in self.covs)
        if len({c.dim for c in covs}) != 1:
            raise ValueError("all components must share a dimension")
        object.__setattr__(self, "weights", tuple(float(v) for v in w))
        object.__setattr__(self, "covs", covs)

    @property
    def dim(self) -> int:
        return self.covs[0].dim

    @classmethod
    def single(cls, cov) -> "MixtureModel":
        return cls((1.0,), (cov,))

    @classmethod
    def from_ensemble(cls, ensemble) -> "MixtureModel":
        return cls(
            tuple(m.weight for m in ensemble.members),
            tuple(m.matrix for m in ensemble.members),
        )

    def logpdf(self, x) -> np.ndarray:
        parts = []
        logw = []
        for b, (w, c) in enumerate(zip(self.weights, self.covs)):
            if w == 0.0:
                continue
            parts.append(gaussian_logpdf(x, c, _label=f"mixture component {b}"))
            logw.append(math.log(w))
        return logsumexp(np.stack(parts) + np.asarray(logw)[:, None], axis=0)

    def pdf(self, x) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(x, dtype=np.float64)).reshape(-1, self.dim)
        acc = np.zeros(pts.shape[0])
        for b, (w, c) in enumerate(zip(self.weights, self.covs)):
            if w == 0.0:
                continue
            acc += w * np.exp(gaussian_logpdf(pts, c, _label=f"mixture component {b}"))
        return acc


def mixture_pdf(x, model: MixtureModel):
    """sum_b w_b f(x; Sigma^b); scalar for a single point."""
    out = model.pdf(x)
    return float(out[0]) if np.ndim(x) <= 1 else out


def _default_radius(ft: MixtureModel) -> float:
    return 5.0 * math.sqrt(max(float(np.max(np.diag(c.values))) for c in ft.covs))


def evaluation_points(ft: MixtureModel, strategy: str = "grid", points: int | None = None,
                      radius: float | None = None, rng=None) -> np.ndarray:
    """Points where the L-infinity distance is evaluated."""
    d = ft.dim
    if radius is None:
        radius = _default_radius(ft)
    if strategy == "grid":
        if d > 2:
            raise CapacityError(f"grid strategy supports d <= 2, got d={d}")
        if points is None:
            points = 401 if d == 1 else 201
        axis = np.linspace(-radius, radius, points)
        if d == 1:
            return axis[:, None]
        xx, yy = np.meshgrid(axis, axis, indexing="ij")
        return np.column_stack([xx.ravel(), yy.ravel()])
    if strategy == "random":
        if d > 4:
            raise CapacityError(f"random strategy supports d <= 4, got d={d}")
        gen, _ = make_rng(rng)
        if points is None:
            points = 100_000
        return gen.uniform(-radius, radius, size=(points, d))
    raise ValueError(f"unknown strategy {strategy!r}")


def linf_distance(fa: MixtureModel, ft: MixtureModel, strategy: str = "grid",
                  points: int | None = None, radius: float | None = None, rng=None,
                  at=None) -> float:
    """max |fa(x) - ft(x)| over a grid (d <= 2) or uniform random points (d <= 4).

    The radius defaults to 5 standard deviations of the widest target
    coordinate. Random evaluation underestimates the true supremum. Pass
    ``at`` to reuse a fixed point set.
    """
    if fa.dim != ft.dim:
        raise ValueError("models have different dimensions")
    pts = at if at is not None else evaluation_points(ft, strategy, points, radius, rng)
    return float(np.max(np.abs(fa.pdf(pts) - ft.pdf(pts))))


def _data(batch) -> np.ndarray:
    return batch.data if isinstance(batch, SampleBatch) else np.asarray(batch, dtype=np.float64)


def sample_covariance(batch) -> SymMatrix:
    """(1/(N-1)) sum_k X^k (X^k)^T without mean subtraction (zero-mean model)."""
    x = _data(batch)
    n = x.shape[0]
    if n < 2:
        raise InsufficientDataError(f"sample covariance needs N >= 2, got {n}")
    c = (x.T @ x) / (n - 1)
    return SymMatrix._wrap(np.triu(c) + np.triu(c, 1).T)


def centered_covariance(batch) -> SymMatrix:
    """Unbiased covariance with the sample mean removed."""
    x = _data(batch)
    if x.shape[0] < 2:
        raise InsufficientDataError("centered covariance needs N >= 2")
    c = np.cov(x, rowvar=False, ddof=1).reshape(x.shape[1], x.shape[1])
    return SymMatrix._wrap(np.triu(c) + np.triu(c, 1).T)


def hoeffding_bound(M: int, delta: float, epsilon: float) -> float:
    """Upper bound min(1, 2 exp(-2 M delta^2 / eps^2)) on Pr(|mean - target| >= delta)."""
    if M < 1:
        raise ValueError("M must be >= 1")
    if delta <= 0 or epsilon <= 0:
        raise ValueError("delta and epsilon must be positive")
    return min(1.0, 2.0 * math.exp(-2.0 * M * delta**2 / epsilon**2))


def sbar(drawn: Sequence) -> SymMatrix:
    """Elementwise mean of Sigma_ij^2 + Sigma_ii Sigma_jj over drawn matrices."""
    mats = [np.asarray(m.values if isinstance(m, SymMatrix) else m, dtype=np.float64) for m in drawn]
    if not mats:
        raise InsufficientDataError("sbar needs at least one matrix")
    if len({m.shape for m in mats}) != 1:
        raise ValueError("inconsistent matrix dimensions")
    acc = np.zeros_like(mats[0])
    for m in mats:
        dg = np.diag(m)
        acc += m * m + np.outer(dg, dg)
    acc /= len(mats)
    return SymMatrix._wrap(np.triu(acc) + np.triu(acc, 1).T)


def combined_bound(N: int, M: int, delta: float, epsilon: float, sbar_ij: float) -> float:
    """Lower bound on Pr(|hat Sigma_ij - Sigma^t_ij| <= delta) for M draws and N samples."""
    if N < 1 or M < 1:
        raise ValueError("N and M must be >= 1")
    if delta <= 0 or epsilon <= 0:
        raise ValueError("delta and epsilon must be positive")
    cheb = 1.0 - 4.0 * sbar_ij / (N * delta**2)
    hoef = 1.0 - 2.0 * math.exp(-M * delta**2 / (2.0 * epsilon**2))
    return min(1.0, max(0.0, cheb * hoef)) if cheb > 0 and hoef > 0 else 0.0


@dataclass(frozen=True)
class BoundReport:
    """Concentration bounds for one (delta, M, N, eps) point.

    ``combined_lower`` is the worst case over entries (largest S-bar).
    """

    delta: float
    M: int
    N: int
    epsilon: float
    hoeffding_prob: float
    combined_lower: float
    sbar: SymMatrix

    def entry_bounds(self) -> np.ndarray:
        s = self.sbar.values
        return np.vectorize(
            lambda v: combined_bound(self.N, self.M, self.delta, self.epsilon, float(v))
        )(s)


def bound_report(drawn, N: int, delta: float, epsilon: float) -> BoundReport:
    S = sbar(drawn)
    M = len(drawn)
    return BoundReport(
        delta=delta,
        M=M,
        N=N,
        epsilon=epsilon,
        hoeffding_prob=hoeffding_bound(M, delta, epsilon),
        combined_lower=combined_bound(N, M, delta, epsilon, float(np.max(S.values))),
        sbar=S,
    )


def rms_error(a, b) -> float:
    """Root mean square over all d^2 entries of a - b."""
    x = np.asarray(a.values if isinstance(a, SymMatrix) else a, dtype=np.float64)
    y = np.asarray(b.values if isinstance(b, SymMatrix) else b, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    return float(np.sqrt(np.mean((x - y) ** 2)))


def loglog_slope(xs, ys) -> float:
    """Least-squares slope of log(y) against log(x)."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.size < 3:
        raise ValueError("need at least 3 paired points")
    if np.any(x <= 0) or np.any(y <= 0):
        raise DomainError("log-log slope needs strictly positive values")
    lx, ly = np.log(x), np.log(y)
    lx = lx - lx.mean()
    return float(np.dot(lx, ly - ly.mean()) / np.dot(lx, lx))
