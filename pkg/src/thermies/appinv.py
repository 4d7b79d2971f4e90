"""Sampling-based matrix inversion on an imprecise device.

The matrix ``A`` is loaded as the precision matrix of the device, so the
sample covariance estimates ``A^-1``. The unmitigated path rounds ``A`` once
to the nearest representable matrix; the mitigated path pools samples from
``M`` stochastically rounded neighbors.
"""

from __future__ import annotations

import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, GridRangeError, InfeasibleError, NotPSDError
from .feaskit import scale_for_feasibility
from .quantgrid import QuantSpec, draw_neighbors, round_nearest
from .sampler import make_rng
from .symcore import CovMatrix, cholesky

__all__ = [
    "InversionConfig",
    "ErrorCurve",
    "scale_to_grid",
    "encode_precision",
    "thermo_invert",
    "inversion_experiment",
    "random_fixture",
    "curves_to_csv",
    "summary_to_csv",
]


@dataclass(frozen=True)
class InversionConfig:
    matrix: CovMatrix
    spec: QuantSpec
    M: int = 4
    total_samples: int = 100_000
    checkpoints: tuple = ()
    repetitions: int = 10
    seed: int = 0
    metric: str = "relative"
    psd_policy: str = "redraw"

    def __post_init__(self):
        if not isinstance(self.matrix, CovMatrix):
            object.__setattr__(self, "matrix", CovMatrix(self.matrix))
        cps = tuple(int(c) for c in self.checkpoints) or default_checkpoints(self.total_samples)
        if list(cps) != sorted(cps) or cps[-1] > self.total_samples or cps[0] < 2:
            raise ConfigurationError("checkpoints must be ascending, >= 2 and <= total_samples")
        object.__setattr__(self, "checkpoints", cps)
        if self.M < 1 or self.repetitions < 1:
            raise ConfigurationError("M and repetitions must be >= 1")
        if self.metric not in ("relative", "absolute"):
            raise ConfigurationError("metric must be 'relative' or 'absolute'")


def default_checkpoints(total: int, count: int = 20) -> tuple:
    pts = np.unique(np.geomspace(min(100, total), total, count).astype(int))
    return tuple(int(p) for p in pts if p >= 2)


@dataclass
class ErrorCurve:
    """Inversion error per checkpoint; ``runs`` has one row per repetition."""

    checkpoints: tuple
    runs: np.ndarray
    mitigated: bool
    mean_error: np.ndarray = field(init=False)
    std_error: np.ndarray = field(init=False)

    def __post_init__(self):
        self.runs = np.atleast_2d(np.asarray(self.runs, dtype=np.float64))
        if self.runs.shape[1] != len(self.checkpoints):
            raise ValueError("run length does not match checkpoints")
        self.mean_error = self.runs.mean(axis=0)
        self.std_error = self.runs.std(axis=0)

    @property
    def final_mean(self) -> float:
        return float(self.mean_error[-1])


def scale_to_grid(A: CovMatrix, spec: QuantSpec) -> float:
    """Positive factor bringing every entry inside the hardware value range.

    Returns 1 when ``A`` already fits, otherwise the admissible factor
    closest to 1.
    """
    a = A.values
    d = A.dim
    diag = np.diag(a)
    off = a[~np.eye(d, dtype=bool)]
    lo_s, hi_s = 0.0, np.inf
    dmin, dmax = spec.diag_values[0], spec.diag_values[-1]
    omin, omax = spec.offdiag_values[0], spec.offdiag_values[-1]
    # constraints of the form lo <= s * x <= hi, s > 0
    for x, lo, hi in [(v, dmin, dmax) for v in diag] + [(v, omin, omax) for v in off]:
        if x > 0:
            lo_s, hi_s = max(lo_s, lo / x), min(hi_s, hi / x)
        elif x < 0:
            lo_s, hi_s = max(lo_s, hi / x), min(hi_s, lo / x)
        elif not lo <= 0.0 <= hi:
            raise GridRangeError("zero entry outside hardware range")
    if lo_s > hi_s * (1 + 1e-12):
        raise GridRangeError(
            "no positive scale brings every entry of the matrix into the hardware range"
        )
    return float(min(max(1.0, lo_s), hi_s))


def encode_precision(A: CovMatrix, spec: QuantSpec) -> tuple[CovMatrix, float]:
    """Scale ``A`` for the device; returns (scaled precision matrix, scale)."""
    if spec.is_uniform:
        return scale_for_feasibility(A, spec.epsilon)
    s = scale_to_grid(A, spec)
    return A.scaled(s), s


def _precision_cov(P: CovMatrix) -> CovMatrix:
    if P.lambda_min <= P.psd_tol:
        raise NotPSDError(f"precision matrix is singular (lambda_min={P.lambda_min:.3g})")
    c = np.linalg.inv(P.values)
    return CovMatrix(np.triu(c) + np.triu(c, 1).T)


def _draw(cov: CovMatrix, n: int, gen) -> np.ndarray:
    L = cholesky(cov)
    return gen.standard_normal((n, cov.dim)) @ L.T


def _interleave(parts: list[np.ndarray]) -> np.ndarray:
    """Round-robin merge so that every prefix mixes all members evenly."""
    within = np.concatenate([np.arange(p.shape[0]) for p in parts])
    member = np.concatenate([np.full(p.shape[0], m) for m, p in enumerate(parts)])
    order = np.lexsort((member, within))
    return np.concatenate(parts, axis=0)[order]


def _checkpoint_errors(x: np.ndarray, checkpoints, scale: float, exact_inv: np.ndarray, metric: str):
    errs = []
    acc = np.zeros((x.shape[1], x.shape[1]))
    start = 0
    ref = np.linalg.norm(exact_inv, "fro") if metric == "relative" else 1.0
    for c in checkpoints:
        chunk = x[start:c]
        acc += chunk.T @ chunk
        start = c
        est = scale * acc / (c - 1)
        errs.append(np.linalg.norm(est - exact_inv, "fro") / ref)
    return np.array(errs)


def thermo_invert(
    A,
    spec: QuantSpec,
    mitigated: bool,
    M: int,
    N: int,
    checkpoints: Sequence[int],
    rng=None,
    metric: str = "relative",
    psd_policy: str = "redraw",
) -> ErrorCurve:
    """One repetition of the inversion experiment; returns its error curve."""
    gen, _ = make_rng(rng)
    if not isinstance(A, CovMatrix):
        A = CovMatrix(A)
    if A.lambda_min <= A.psd_tol:
        raise InfeasibleError("matrix to invert must be positive definite")
    cps = tuple(int(c) for c in checkpoints)
    P, scale = encode_precision(A, spec)
    exact_inv = np.linalg.inv(A.values)
    if mitigated:
        _, mats = draw_neighbors(P, spec, M, gen, psd_policy=psd_policy)
        base, extra = divmod(N, M)
        parts = []
        for m, Pm in enumerate(mats):
            parts.append(_draw(_precision_cov(Pm), base + (1 if m < extra else 0), gen))
        x = _interleave(parts)
    else:
        Pr = CovMatrix(round_nearest(P, spec).values)
        x = _draw(_precision_cov(Pr), N, gen)
    return ErrorCurve(cps, _checkpoint_errors(x, cps, scale, exact_inv, metric)[None, :], mitigated)


def inversion_experiment(config: InversionConfig, workers: int = 1) -> tuple[ErrorCurve, ErrorCurve]:
    """Run both paths for every repetition; repetition r uses the same seed on both paths."""
    children = np.random.SeedSequence(config.seed).spawn(config.repetitions)

    def one(r: int):
        out = []
        for mitigated in (True, False):
            gen = np.random.default_rng(children[r])
            out.append(
                thermo_invert(
                    config.matrix, config.spec, mitigated, config.M, config.total_samples,
                    config.checkpoints, gen, metric=config.metric, psd_policy=config.psd_policy,
                ).runs[0]
            )
        return out

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, range(config.repetitions)))
    else:
        results = [one(r) for r in range(config.repetitions)]
    mit = ErrorCurve(config.checkpoints, np.array([r[0] for r in results]), True)
    unmit = ErrorCurve(config.checkpoints, np.array([r[1] for r in results]), False)
    return mit, unmit


def random_fixture(seed: int, d: int = 8, diag_range=(3.4, 6.4), off_scale=0.45) -> CovMatrix:
    """Random diagonally dominant matrix whose entries fit the hardware grid unscaled."""
    gen = np.random.default_rng(seed)
    a = np.zeros((d, d))
    iu = np.triu_indices(d, 1)
    a[iu] = gen.uniform(-off_scale, off_scale, size=iu[0].size)
    a = a + a.T
    a[np.diag_indices(d)] = gen.uniform(*diag_range, size=d)
    # keep the matrix strictly diagonally dominant
    row = np.abs(a).sum(axis=1) - np.abs(np.diag(a))
    if np.any(np.diag(a) <= row):
        raise ConfigurationError("fixture parameters do not give diagonal dominance")
    return CovMatrix(a)


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def curves_to_csv(mit: ErrorCurve, unmit: ErrorCurve) -> str:
    buf = io.StringIO()
    buf.write("rep,checkpoint,mitigated,error\n")
    for curve in (mit, unmit):
        for r, run in enumerate(curve.runs):
            for c, e in zip(curve.checkpoints, run):
                buf.write(f"{r},{c},{int(curve.mitigated)},{_fmt(e)}\n")
    return buf.getvalue()


def summary_to_csv(mit: ErrorCurve, unmit: ErrorCurve) -> str:
    buf = io.StringIO()
    buf.write("checkpoint,mitigated,mean_error,std_error\n")
    for curve in (mit, unmit):
        for c, m, s in zip(curve.checkpoints, curve.mean_error, curve.std_error):
            buf.write(f"{c},{int(curve.mitigated)},{_fmt(m)},{_fmt(s)}\n")
    return buf.getvalue()
