"""Quantization models and nearest-neighbor ensembles.

A target covariance is bracketed elementwise by two representable values
``lo <= x <= hi``. Each upper-triangle entry rounds up independently with
probability ``w = (x - lo) / (hi - lo)``, so the expected neighbor equals the
target exactly. For a uniform grid of step ``eps`` the brackets are
``eps * floor(x / eps)`` and one step above, and ``w`` is the residual.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    CapacityError,
    FeasibilityWarning,
    GridRangeError,
    InfeasibleError,
    NotPSDError,
    PrecisionError,
)
from .symcore import CovMatrix, SymMatrix, psd_tol, upper_indices

__all__ = [
    "QuantSpec",
    "HARDWARE_DIAG_VALUES",
    "HARDWARE_OFFDIAG_VALUES",
    "ResidualMatrix",
    "NeighborDraw",
    "NeighborEnsemble",
    "Brackets",
    "brackets",
    "residual",
    "grid_bracket",
    "neighbor_weight",
    "draw_neighbor",
    "draw_neighbors",
    "enumerate_ensemble",
    "round_nearest",
    "is_representable",
    "check_strict",
    "running_neighbor_mean",
    "bits_to_index",
    "ENUMERATION_CAP",
    "MAX_REDRAWS",
    "PSD_POLICIES",
]

HARDWARE_DIAG_VALUES = (1.0, 3.2, 4.3, 6.5)
HARDWARE_OFFDIAG_VALUES = (-0.47, 0.0, 0.47)

ENUMERATION_CAP = 24
MAX_REDRAWS = 100
SNAP_RTOL = 1e-12
PSD_POLICIES = ("redraw", "clip", "error")


@dataclass(frozen=True)
class QuantSpec:
    """Set of values a device can realize for each covariance entry.

    ``mode="uniform"`` means every multiple of ``epsilon``. ``mode="grid"``
    gives explicit, strictly increasing value lists for the diagonal and the
    off-diagonal positions.
    """

    mode: str = "uniform"
    epsilon: float | None = None
    diag_values: tuple[float, ...] = ()
    offdiag_values: tuple[float, ...] = ()

    def __post_init__(self):
        if self.mode == "uniform":
            if self.epsilon is None or not np.isfinite(self.epsilon) or self.epsilon <= 0:
                raise ValueError(f"uniform quantization needs epsilon > 0, got {self.epsilon!r}")
            object.__setattr__(self, "epsilon", float(self.epsilon))
        elif self.mode == "grid":
            for name in ("diag_values", "offdiag_values"):
                vals = tuple(float(v) for v in getattr(self, name))
                if len(vals) < 2 or any(b <= a for a, b in zip(vals, vals[1:])):
                    raise ValueError(f"{name} must be strictly increasing with >= 2 entries")
                object.__setattr__(self, name, vals)
        else:
            raise ValueError(f"unknown quantization mode {self.mode!r}")

    @classmethod
    def uniform(cls, epsilon: float) -> "QuantSpec":
        return cls(mode="uniform", epsilon=epsilon)

    @classmethod
    def grid(cls, diag_values=HARDWARE_DIAG_VALUES, offdiag_values=HARDWARE_OFFDIAG_VALUES):
        return cls(mode="grid", diag_values=tuple(diag_values), offdiag_values=tuple(offdiag_values))

    @classmethod
    def hardware(cls) -> "QuantSpec":
        """The 8-cell device grid: diagonal {1.0, 3.2, 4.3, 6.5}, off-diagonal {-0.47, 0, 0.47}."""
        return cls.grid()

    @property
    def is_uniform(self) -> bool:
        return self.mode == "uniform"

    def to_config(self) -> dict:
        if self.is_uniform:
            return {"quant.mode": "uniform", "quant.epsilon": self.epsilon}
        return {
            "quant.mode": "grid",
            "quant.diag_values": list(self.diag_values),
            "quant.offdiag_values": list(self.offdiag_values),
        }

    @classmethod
    def from_config(cls, cfg: dict) -> "QuantSpec":
        mode = cfg.get("quant.mode", "uniform")
        if mode == "uniform":
            return cls.uniform(float(cfg["quant.epsilon"]))
        return cls.grid(
            cfg.get("quant.diag_values", HARDWARE_DIAG_VALUES),
            cfg.get("quant.offdiag_values", HARDWARE_OFFDIAG_VALUES),
        )


def _target_values(target) -> np.ndarray:
    if isinstance(target, SymMatrix):
        return target.values
    return SymMatrix(target).values


def _snap_uniform(x: np.ndarray, eps: float) -> tuple[np.ndarray, np.ndarray]:
    """Floor of x/eps and the residual, with near-integers snapped to exact."""
    q = x / eps
    nearest = np.round(q)
    hit = np.abs(q - nearest) <= SNAP_RTOL * np.maximum(1.0, np.abs(q))
    fl = np.where(hit, nearest, np.floor(q))
    r = np.where(hit, 0.0, q - fl)
    # q - floor(q) can round up to exactly 1.0 for q just below an integer
    r = np.minimum(r, np.nextafter(1.0, 0.0))
    return fl, r


class ResidualMatrix(SymMatrix):
    """Symmetric matrix of round-up probabilities, every entry in [0, 1)."""

    __slots__ = ()


def residual(target, spec: QuantSpec) -> ResidualMatrix:
    """R = target/eps - floor(target/eps), elementwise (mathematical floor)."""
    if not spec.is_uniform:
        raise ValueError("residual is defined for uniform quantization; use brackets() for grids")
    _, r = _snap_uniform(_target_values(target), spec.epsilon)
    return ResidualMatrix._wrap(r)


def _grid_bracket_array(x: np.ndarray, values: Sequence[float]):
    vals = np.asarray(values, dtype=np.float64)
    span = max(1.0, float(np.max(np.abs(vals))))
    tol = SNAP_RTOL * span
    if np.any(x < vals[0] - tol) or np.any(x > vals[-1] + tol):
        bad = x[(x < vals[0] - tol) | (x > vals[-1] + tol)]
        raise GridRangeError(
            f"value {float(bad.flat[0])!r} outside grid range [{vals[0]}, {vals[-1]}]; "
            "rescale the target so that all entries lie within the hardware limits"
        )
    # snap to grid points within float noise
    idx_near = np.argmin(np.abs(x[..., None] - vals), axis=-1)
    near = vals[idx_near]
    hit = np.abs(x - near) <= tol
    hi_idx = np.clip(np.searchsorted(vals, x, side="right"), 1, len(vals) - 1)
    lo = vals[hi_idx - 1]
    hi = vals[hi_idx]
    w = np.clip((x - lo) / (hi - lo), 0.0, 1.0)
    lo = np.where(hit, near, lo)
    hi = np.where(hit, near, hi)
    w = np.where(hit, 0.0, w)
    return lo, hi, w


def grid_bracket(x: float, values: Sequence[float]) -> tuple[float, float, float]:
    """Adjacent grid values around ``x`` and the round-up probability.

    An exact grid hit returns ``(x, x, 0.0)``.
    """
    vals = list(values)
    if len(vals) < 2 or any(b <= a for a, b in zip(vals, vals[1:])):
        raise ValueError("grid values must be strictly increasing with >= 2 entries")
    lo, hi, w = _grid_bracket_array(np.asarray([float(x)]), vals)
    return float(lo[0]), float(hi[0]), float(w[0])


@dataclass(frozen=True)
class Brackets:
    """Elementwise rounding brackets of a target (full d x d arrays)."""

    lo: np.ndarray
    hi: np.ndarray
    w: np.ndarray

    @property
    def dim(self) -> int:
        return self.lo.shape[0]

    @property
    def active(self) -> np.ndarray:
        """Boolean mask over the vectorized upper triangle: positions with w > 0."""
        iu = upper_indices(self.dim)
        return self.w[iu] > 0.0


def brackets(target, spec: QuantSpec) -> Brackets:
    a = _target_values(target)
    if spec.is_uniform:
        fl, r = _snap_uniform(a, spec.epsilon)
        lo = spec.epsilon * fl
        hi = np.where(r > 0, lo + spec.epsilon, lo)
        return Brackets(lo, hi, r)
    d = a.shape[0]
    diag = np.eye(d, dtype=bool)
    lo = np.empty_like(a)
    hi = np.empty_like(a)
    w = np.empty_like(a)
    for mask, vals in ((diag, spec.diag_values), (~diag, spec.offdiag_values)):
        if mask.any():
            l, h, ww = _grid_bracket_array(a[mask], vals)
            lo[mask], hi[mask], w[mask] = l, h, ww
    # enforce bitwise symmetry
    lo = np.triu(lo) + np.triu(lo, 1).T
    hi = np.triu(hi) + np.triu(hi, 1).T
    w = np.triu(w) + np.triu(w, 1).T
    return Brackets(lo, hi, w)


def round_nearest(target, spec: QuantSpec) -> SymMatrix:
    """Round every entry to the closest representable value, ties upward."""
    b = brackets(target, spec)
    a = _target_values(target)
    up = (b.hi - a) <= (a - b.lo)
    return SymMatrix._wrap(np.where(up, b.hi, b.lo))


def is_representable(target, spec: QuantSpec) -> tuple[bool, tuple[int, int] | None]:
    """Whether every entry is on the grid; also returns the first offending (i, j)."""
    b = brackets(target, spec)
    d = b.dim
    for i, j in zip(*upper_indices(d)):
        if b.w[i, j] > 0.0:
            return False, (int(i), int(j))
    return True, None


def bits_to_index(bits_vec) -> int:
    """Hypercube vertex index with the first vectorized position most significant."""
    idx = 0
    for b in np.asarray(bits_vec, dtype=np.int64):
        idx = (idx << 1) | int(b)
    return idx


def neighbor_weight(target, spec: QuantSpec, bits) -> float:
    """Product over positions of ``w_i`` (bit 1) or ``1 - w_i`` (bit 0)."""
    b = brackets(target, spec)
    iu = upper_indices(b.dim)
    w = b.w[iu]
    bits = np.asarray(bits)
    if bits.ndim == 2:
        bits = bits[iu]
    if bits.shape != w.shape:
        raise ValueError(f"bits must have length {w.shape[0]}, got {bits.shape}")
    return float(np.prod(np.where(bits.astype(bool), w, 1.0 - w)))


@dataclass(frozen=True)
class NeighborDraw:
    """One realized neighbor: binary round-up matrix and the covariance it selects."""

    bits: np.ndarray
    matrix: CovMatrix
    weight: float | None = None

    @property
    def bits_vector(self) -> np.ndarray:
        return self.bits[upper_indices(self.bits.shape[0])]

    @property
    def index(self) -> int:
        return bits_to_index(self.bits_vector)

    @property
    def label(self) -> str:
        return "".join(str(int(b)) for b in self.bits_vector)


def _bits_matrix(vec: np.ndarray, d: int) -> np.ndarray:
    m = np.zeros((d, d), dtype=np.uint8)
    iu = upper_indices(d)
    m[iu] = vec
    m.T[iu] = vec
    return m


def _assemble(b: Brackets, bits_vecs: np.ndarray) -> np.ndarray:
    """Stack of neighbor matrices for an (n, D) array of bit vectors."""
    d = b.dim
    iu = upper_indices(d)
    lo, hi = b.lo[iu], b.hi[iu]
    vec = np.where(bits_vecs.astype(bool), hi, lo)
    out = np.empty((bits_vecs.shape[0], d, d))
    out[:, iu[0], iu[1]] = vec
    out[:, iu[1], iu[0]] = vec
    return out


def _check_uniform_feasibility(target, spec: QuantSpec):
    if not spec.is_uniform:
        return
    t = target if isinstance(target, CovMatrix) else CovMatrix(target)
    if t.lambda_min < t.dim * spec.epsilon:
        warnings.warn(
            f"lambda_min={t.lambda_min:.4g} < d*eps={t.dim * spec.epsilon:.4g}: "
            "neighbors are not guaranteed PSD; reject-and-redraw engaged",
            FeasibilityWarning,
            stacklevel=3,
        )


def _clip_psd(a: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(a)
    c = (v * np.maximum(w, 0.0)) @ v.T
    return np.triu(c) + np.triu(c, 1).T


def draw_neighbors(
    target,
    spec: QuantSpec,
    count: int,
    rng: np.random.Generator,
    psd_policy: str = "redraw",
    max_redraws: int = MAX_REDRAWS,
    check_psd: bool = True,
) -> tuple[np.ndarray, list[CovMatrix]]:
    """Draw ``count`` independent neighbors at once.

    Returns the ``(count, D)`` bit array and the list of neighbor matrices.
    Non-PSD draws are handled by ``psd_policy``:

    ``redraw``
        Draw the offending member again; fail after ``max_redraws``
        consecutive non-PSD draws.
    ``clip``
        Replace negative eigenvalues by zero. The result leaves the grid and
        breaks exact covariance matching.
    ``error``
        Raise on the first non-PSD draw.
    """
    if psd_policy not in PSD_POLICIES:
        raise ValueError(f"psd_policy must be one of {PSD_POLICIES}")
    if check_psd:
        _check_uniform_feasibility(target, spec)
    b = brackets(target, spec)
    d = b.dim
    iu = upper_indices(d)
    w = b.w[iu]
    active = w > 0.0
    bits = np.zeros((count, w.shape[0]), dtype=np.uint8)
    if count == 0:
        return bits, []
    bits[:, active] = rng.random((count, int(active.sum()))) < w[active]
    if not check_psd:
        mats = _assemble(b, bits)
        return bits, [SymMatrix._wrap(m) for m in mats]

    # spectra are computed once per distinct neighbor
    cache: dict[bytes, tuple[float, float]] = {}

    def spectra(rows: np.ndarray):
        uniq, inv = np.unique(rows, axis=0, return_inverse=True)
        inv = np.asarray(inv).reshape(-1)
        lo_hi = np.empty((uniq.shape[0], 2))
        todo = [k for k in range(uniq.shape[0]) if uniq[k].tobytes() not in cache]
        if todo:
            mats = _assemble(b, uniq[todo])
            ev = np.linalg.eigvalsh(mats)
            for k, e in zip(todo, ev):
                cache[uniq[k].tobytes()] = (float(e[0]), float(e[-1]))
        for k in range(uniq.shape[0]):
            lo_hi[k] = cache[uniq[k].tobytes()]
        return lo_hi[inv]

    lh = spectra(bits)
    tols = np.array([psd_tol(b.hi)] * count)
    bad = lh[:, 0] < -tols
    if bad.any() and psd_policy == "redraw":
        for _ in range(max_redraws):
            rows = np.flatnonzero(bad)
            fresh = np.zeros((rows.size, w.shape[0]), dtype=np.uint8)
            fresh[:, active] = rng.random((rows.size, int(active.sum()))) < w[active]
            bits[rows] = fresh
            lh[rows] = spectra(fresh)
            bad[rows] = lh[rows, 0] < -tols[rows]
            if not bad.any():
                break
        else:
            raise InfeasibleError(
                f"{max_redraws} consecutive non-PSD neighbor draws; target is infeasible "
                "at this precision (rescale with scale_for_feasibility)"
            )
    elif bad.any() and psd_policy == "error":
        k = int(np.flatnonzero(bad)[0])
        raise NotPSDError(
            f"drawn neighbor {''.join(map(str, bits[k]))} has lambda_min={lh[k, 0]:.4g}"
        )

    mats = _assemble(b, bits)
    out = []
    for k in range(count):
        if bad[k]:
            c = _clip_psd(mats[k])
            e = np.linalg.eigvalsh(c)
            out.append(CovMatrix._trusted(c, max(e[0], 0.0), e[-1]))
        else:
            out.append(CovMatrix._trusted(mats[k], lh[k, 0], lh[k, 1]))
    return bits, out


def draw_neighbor(
    target,
    spec: QuantSpec,
    rng: np.random.Generator,
    psd_policy: str = "redraw",
    max_redraws: int = MAX_REDRAWS,
) -> NeighborDraw:
    """Draw a single neighbor by independent Bernoulli rounding of each upper-triangle entry."""
    bits, mats = draw_neighbors(target, spec, 1, rng, psd_policy=psd_policy, max_redraws=max_redraws)
    d = mats[0].dim
    return NeighborDraw(bits=_bits_matrix(bits[0], d), matrix=mats[0])


@dataclass
class NeighborEnsemble:
    """Nearest-neighbor ensemble of a target.

    ``members`` is populated by :func:`enumerate_ensemble`. An ensemble built
    directly is in sampled mode and produces neighbors through :meth:`draw`.
    """

    target: CovMatrix
    spec: QuantSpec
    members: list[NeighborDraw] | None = None
    psd_policy: str = "redraw"
    _brackets: Brackets | None = field(default=None, repr=False)

    @property
    def enumerated(self) -> bool:
        return self.members is not None

    @property
    def brackets(self) -> Brackets:
        if self._brackets is None:
            self._brackets = brackets(self.target, self.spec)
        return self._brackets

    @property
    def d_eff(self) -> int:
        return int(self.brackets.active.sum())

    def draw(self, rng: np.random.Generator, count: int | None = None):
        if count is None:
            return draw_neighbor(self.target, self.spec, rng, psd_policy=self.psd_policy)
        return draw_neighbors(self.target, self.spec, count, rng, psd_policy=self.psd_policy)

    @property
    def weights(self) -> np.ndarray:
        if self.members is None:
            raise ValueError("sampled ensemble has no explicit weights")
        return np.array([m.weight for m in self.members])

    def mean_matrix(self) -> np.ndarray:
        """Weighted average of the members, computed by compensated summation."""
        if self.members is None:
            raise ValueError("sampled ensemble has no explicit members")
        d = self.target.dim
        acc = np.zeros((d, d))
        comp = np.zeros((d, d))
        for m in self.members:
            y = m.weight * m.matrix.values - comp
            t = acc + y
            comp = (t - acc) - y
            acc = t
        return acc


def enumerate_ensemble(target, spec: QuantSpec, cap: int = ENUMERATION_CAP) -> NeighborEnsemble:
    """All neighbors with multilinear interpolation weights.

    Only positions with a nonzero round-up probability branch, so the ensemble
    has ``2 ** d_eff`` members, ordered by hypercube vertex index.
    """
    t = target if isinstance(target, CovMatrix) else CovMatrix(target)
    b = brackets(t, spec)
    d = b.dim
    iu = upper_indices(d)
    w = b.w[iu]
    active = np.flatnonzero(w > 0.0)
    if active.size > cap:
        raise CapacityError(
            f"{active.size} active positions exceed the enumeration cap of {cap}; "
            "use the sampled ensemble (draw_neighbors) instead"
        )
    combos = np.array(list(itertools.product((0, 1), repeat=active.size)), dtype=np.uint8)
    combos = combos.reshape(2**active.size, active.size)
    bits = np.zeros((combos.shape[0], w.shape[0]), dtype=np.uint8)
    bits[:, active] = combos
    wa = w[active]
    weights = np.prod(np.where(combos.astype(bool), wa, 1.0 - wa), axis=1)
    mats = _assemble(b, bits)
    ev = np.linalg.eigvalsh(mats)
    tol = psd_tol(b.hi)
    members = []
    for k in range(bits.shape[0]):
        if ev[k, 0] < -tol:
            label = "".join(map(str, bits[k]))
            raise InfeasibleError(
                f"neighbor {label} is not PSD (lambda_min={ev[k, 0]:.4g}); "
                "rescale the target with scale_for_feasibility"
            )
        members.append(
            NeighborDraw(
                bits=_bits_matrix(bits[k], d),
                matrix=CovMatrix._trusted(mats[k], ev[k, 0], ev[k, -1]),
                weight=float(weights[k]),
            )
        )
    return NeighborEnsemble(target=t, spec=spec, members=members, _brackets=b)


def running_neighbor_mean(
    target, spec: QuantSpec, checkpoints: Sequence[int], rng: np.random.Generator
) -> list[np.ndarray]:
    """Average of the first M drawn neighbors, reported at each checkpoint M.

    Draws one neighbor at a time over the upper triangle only, without PSD
    checks, so it scales to d ~ 1000.
    """
    cps = sorted(int(m) for m in checkpoints)
    if not cps or cps[0] < 1:
        raise ValueError("checkpoints must be positive")
    b = brackets(target, spec)
    d = b.dim
    iu = upper_indices(d)
    w = b.w[iu]
    lo, hi = b.lo[iu], b.hi[iu]
    active = np.flatnonzero(w > 0.0)
    wa = w[active]
    counts = np.zeros(active.size, dtype=np.int64)
    out = []
    drawn = 0
    for m in cps:
        while drawn < m:
            counts += rng.random(active.size) < wa
            drawn += 1
        vec = lo.copy()
        vec[active] = lo[active] + (hi[active] - lo[active]) * (counts / m)
        mat = np.empty((d, d))
        mat[iu] = vec
        mat.T[iu] = vec
        out.append(mat)
    return out


def check_strict(requested, spec: QuantSpec):
    ok, idx = is_representable(requested, spec)
    if not ok:
        i, j = idx
        val = _target_values(requested)[i, j]
        raise PrecisionError(
            f"entry ({i},{j})={val!r} is not representable on the device", index=idx
        )
