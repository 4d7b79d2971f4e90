"""Parameter sweeps behind the command-line harness.

Every stochastic task draws from its own stream seeded by
``(seed, tag, task index)``, so results do not depend on how tasks are
spread over worker threads.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence

import numpy as np

from .analyze import MixtureModel, evaluation_points, linf_distance, rms_error
from .quantgrid import (
    QuantSpec,
    _snap_uniform,
    draw_neighbors,
    enumerate_ensemble,
    round_nearest,
    running_neighbor_mean,
)
from .symcore import CovMatrix

__all__ = [
    "task_rng",
    "parallel_map",
    "random_spd",
    "fixed_residual_target",
    "sweep_base",
    "linf_pair",
    "sweep_epsilon",
    "inverse_error_pair",
    "sweep_ensemble_draws",
    "hoeffding_trials",
    "DEFAULT_EPSILONS",
    "DEFAULT_M_VALUES",
    "DEFAULT_M_DIMS",
]

DEFAULT_EPSILONS = tuple(round(0.02 * k, 10) for k in range(1, 26))
DEFAULT_M_VALUES = tuple(2**k for k in range(11))
DEFAULT_M_DIMS = (8, 64, 512, 1024)

_TAGS = {"eps": 1, "m": 2, "hoeffding": 3, "target": 4, "points": 5}


def task_rng(seed: int, tag: str, *index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), _TAGS[tag], *(int(i) for i in index)])


def parallel_map(fn: Callable, items: Sequence, workers: int = 1) -> list:
    """Map in order; thread count never changes the result."""
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def random_spd(d: int, rng: np.random.Generator, lam_range=(1.0, 2.0)) -> np.ndarray:
    """Random rotation of a spectrum drawn uniformly from ``lam_range``."""
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    q = q * np.sign(np.diag(r))
    lam = rng.uniform(*lam_range, size=d)
    a = (q * lam) @ q.T
    return np.triu(a) + np.triu(a, 1).T


def fixed_residual_target(base, epsilon: float, residuals) -> CovMatrix:
    """eps * floor(base / eps) + eps * R, so the round-up probabilities equal R at every eps."""
    b = np.asarray(base.values if hasattr(base, "values") else base, dtype=np.float64)
    fl, _ = _snap_uniform(b, epsilon)
    return CovMatrix(epsilon * (fl + np.asarray(residuals, dtype=np.float64)))


def sweep_base(d: int, seed: int, eps_max: float = 0.2):
    """Base matrix and fixed residuals for dimension ``d``.

    The spectrum starts at ``2 d eps_max`` (at least 1) so the shifted target
    and all of its neighbors stay positive definite over the sweep.
    """
    rng = task_rng(seed, "target", d)
    lo = max(1.0, 2.0 * d * eps_max) * 1.1
    base = random_spd(d, rng, (lo, 2.0 * lo))
    r = rng.uniform(0.1, 0.9, size=(d, d))
    r = np.triu(r) + np.triu(r, 1).T
    return base, r


def linf_pair(target: CovMatrix, spec: QuantSpec, strategy: str = "grid", points=None,
              rng=None, baseline: str = "nearest") -> tuple[float, float]:
    """L-infinity distance to the target for the mixture and for a single rounded matrix."""
    ft = MixtureModel.single(target)
    fa = MixtureModel.from_ensemble(enumerate_ensemble(target, spec))
    if baseline == "nearest":
        rounded = round_nearest(target, spec).values
    elif baseline == "floor":
        rounded = spec.epsilon * _snap_uniform(target.values, spec.epsilon)[0]
    else:
        raise ValueError(f"unknown baseline {baseline!r}")
    fu = MixtureModel.single(CovMatrix(rounded))
    pts = evaluation_points(ft, strategy, points, None, rng)
    return linf_distance(fa, ft, at=pts), linf_distance(fu, ft, at=pts)


def sweep_epsilon(dims=(1, 2, 3, 4), epsilons=DEFAULT_EPSILONS, seed: int = 0,
                  baseline: str = "nearest", random_points: int = 100_000, workers: int = 1):
    """Rows (dim, epsilon, mitigated, linf) for fixed-residual targets."""
    eps_max = max(epsilons)
    tasks = [(d, k, e) for d in dims for k, e in enumerate(epsilons)]

    def run(task):
        d, k, e = task
        base, r = sweep_base(d, seed, eps_max)
        target = fixed_residual_target(base, e, r)
        strategy = "grid" if d <= 2 else "random"
        rng = task_rng(seed, "points", d, k) if strategy == "random" else None
        mit, unmit = linf_pair(target, QuantSpec.uniform(e), strategy,
                               None if strategy == "grid" else random_points, rng, baseline)
        return [(d, e, 1, mit), (d, e, 0, unmit)]

    rows = []
    for pair in parallel_map(run, tasks, workers):
        rows.extend(pair)
    return rows


def inverse_error_pair(base, residuals, epsilon: float, g=None) -> tuple[float, float]:
    """Frobenius error of the mitigated estimate of g and of g at the nearest rounding.

    ``g`` defaults to the matrix inverse.
    """
    from .mitigate import mitigated_estimate

    if g is None:
        g = lambda c: np.linalg.inv(c.values)  # noqa: E731
    target = fixed_residual_target(base, epsilon, residuals)
    spec = QuantSpec.uniform(epsilon)
    exact = np.ravel(g(target))
    est = mitigated_estimate(g, target, spec, mode="exact")
    single = np.ravel(g(CovMatrix(round_nearest(target, spec).values)))
    return float(np.linalg.norm(est - exact)), float(np.linalg.norm(single - exact))


def random_sweep_target(d: int, rng: np.random.Generator) -> CovMatrix:
    """Wishart-type target with entries spanning several quantization steps."""
    g = rng.standard_normal((d, d))
    a = 4.0 * (g @ g.T) / d + np.eye(d)
    return CovMatrix(np.triu(a) + np.triu(a, 1).T)


def sweep_ensemble_draws(dims=DEFAULT_M_DIMS, m_values=DEFAULT_M_VALUES, seeds: int = 10,
                         seed: int = 0, epsilon: float = 1.0, workers: int = 1):
    """RMS(mean of M drawn neighbors, target) per (dim, M), averaged over ``seeds`` targets.

    Returns rows (dim, M, mean_rms, std_rms).
    """
    spec = QuantSpec.uniform(epsilon)
    ms = sorted(int(m) for m in m_values)
    tasks = [(d, s) for d in dims for s in range(seeds)]

    def run(task):
        d, s = task
        rng = task_rng(seed, "m", d, s)
        target = random_sweep_target(d, rng)
        means = running_neighbor_mean(target, spec, ms, rng)
        return [rms_error(m, target) for m in means]

    results = parallel_map(run, tasks, workers)
    rows = []
    for d in dims:
        block = np.array([res for (dd, _), res in zip(tasks, results) if dd == d])
        for j, m in enumerate(ms):
            rows.append((d, m, float(block[:, j].mean()), float(block[:, j].std())))
    return rows


def hoeffding_trials(target, spec: QuantSpec, M: int, delta: float, trials: int, rng) -> np.ndarray:
    """Frequency over trials of |mean of M neighbors - target| >= delta, per entry."""
    t = target if isinstance(target, CovMatrix) else CovMatrix(target)
    hits = np.zeros((t.dim, t.dim))
    for _ in range(trials):
        _, mats = draw_neighbors(t, spec, M, rng, check_psd=False)
        mean = np.mean([m.values for m in mats], axis=0)
        # deviations are multiples of eps / M; count exact ties as hits
        hits += np.abs(mean - t.values) >= delta * (1.0 - 1e-9)
    return hits / trials
