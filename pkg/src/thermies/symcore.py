"""Symmetric and positive semi-definite matrix foundation.

``SymMatrix`` and ``CovMatrix`` wrap read-only ``numpy`` arrays. Values are
immutable after construction so instances can be shared between threads.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg
from scipy.linalg import lapack

from .errors import (
    FactorizationError,
    NotPSDError,
    SingularMatrixError,
    SolverError,
    SymmetryError,
)

__all__ = [
    "SymMatrix",
    "CovMatrix",
    "psd_tol",
    "vectorize_upper",
    "devectorize_upper",
    "upper_indices",
    "is_psd",
    "eig_extremes",
    "condition_number",
    "matrix_norm",
    "cholesky",
]

ASYMMETRY_RTOL = 1e-8
FULL_EIG_MAX_DIM = 64
EIG_TOL = 1e-8


def psd_tol(values) -> float:
    """PSD tolerance, relative to the elementwise max norm."""
    a = np.asarray(values, dtype=float)
    scale = float(np.max(np.abs(a))) if a.size else 0.0
    return 1e-9 * max(1.0, scale)


def _as_square(values) -> np.ndarray:
    a = np.array(values, dtype=np.float64)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise SymmetryError(f"expected a non-empty square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise SymmetryError("matrix contains non-finite entries")
    return a


class SymMatrix:
    """Real symmetric d x d matrix.

    The input is symmetrized as ``(A + A.T) / 2``. Inputs whose asymmetry
    exceeds ``1e-8`` relative to the largest entry are rejected.
    """

    __slots__ = ("_values",)

    def __init__(self, values):
        a = _as_square(values)
        scale = max(1.0, float(np.max(np.abs(a))))
        diff = np.abs(a - a.T)
        worst = float(np.max(diff))
        if worst > ASYMMETRY_RTOL * scale:
            i, j = np.unravel_index(int(np.argmax(diff)), diff.shape)
            i, j = sorted((int(i), int(j)))
            raise SymmetryError(
                f"matrix is not symmetric at ({i},{j}): "
                f"{a[i, j]!r} vs {a[j, i]!r}"
            )
        a = (a + a.T) / 2.0
        a.setflags(write=False)
        self._values = a

    @classmethod
    def _wrap(cls, a: np.ndarray):
        # caller guarantees exact symmetry
        obj = cls.__new__(cls)
        a = np.array(a, dtype=np.float64)
        a.setflags(write=False)
        obj._values = a
        return obj

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def dim(self) -> int:
        return self._values.shape[0]

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self._values
        return self._values.astype(dtype)

    def __getitem__(self, idx):
        return self._values[idx]

    def __eq__(self, other):
        if not isinstance(other, SymMatrix):
            return NotImplemented
        return np.array_equal(self._values, other._values)

    def __hash__(self):
        return hash(self._values.tobytes())

    def __repr__(self):
        return f"{type(self).__name__}({self._values.tolist()!r})"


class CovMatrix(SymMatrix):
    """Symmetric PSD matrix with cached extreme eigenvalues."""

    __slots__ = ("lambda_min", "lambda_max")

    def __init__(self, values):
        super().__init__(values)
        lo, hi = eig_extremes(self._values)
        tol = psd_tol(self._values)
        if lo < -tol:
            raise NotPSDError(
                f"matrix is not positive semi-definite: lambda_min={lo:.6g} < -{tol:.3g}"
            )
        self.lambda_min = lo
        self.lambda_max = hi

    @classmethod
    def _trusted(cls, a: np.ndarray, lambda_min: float, lambda_max: float):
        """Build from an exactly symmetric array whose spectrum is already known."""
        obj = cls._wrap(a)
        obj.lambda_min = float(lambda_min)
        obj.lambda_max = float(lambda_max)
        return obj

    @property
    def psd_tol(self) -> float:
        return psd_tol(self._values)

    def scaled(self, c: float) -> "CovMatrix":
        if c <= 0:
            raise ValueError("scale must be positive")
        return CovMatrix._trusted(c * self._values, c * self.lambda_min, c * self.lambda_max)


def _values(A) -> np.ndarray:
    if isinstance(A, SymMatrix):
        return A.values
    return SymMatrix(A).values


def upper_indices(d: int) -> tuple[np.ndarray, np.ndarray]:
    """Row and column indices of the upper triangle in row-major order."""
    return np.triu_indices(d)


def vectorize_upper(A) -> np.ndarray:
    """Append the rows of the upper triangle: (A11, A12, ..., A1d, A22, ...)."""
    a = _values(A)
    iu = upper_indices(a.shape[0])
    return a[iu].copy()


def devectorize_upper(vec, d: int | None = None) -> SymMatrix:
    """Inverse of :func:`vectorize_upper`."""
    v = np.asarray(vec, dtype=np.float64)
    D = v.shape[0]
    if d is None:
        d = int(round((np.sqrt(8 * D + 1) - 1) / 2))
    if d * (d + 1) // 2 != D:
        raise ValueError(f"vector length {D} is not a triangular number")
    a = np.zeros((d, d))
    iu = upper_indices(d)
    a[iu] = v
    a.T[iu] = v
    return SymMatrix._wrap(a)


def is_psd(A, tol: float = 0.0) -> bool:
    """True iff the smallest eigenvalue of ``A`` is at least ``-tol``."""
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    lo, _ = eig_extremes(A)
    return lo >= -tol


def eig_extremes(A) -> tuple[float, float]:
    """Return the algebraically smallest and largest eigenvalues.

    Dimensions up to 64 use a full symmetric eigendecomposition; larger
    ones compute only the two extreme eigenvalues.
    """
    a = A.values if isinstance(A, SymMatrix) else np.asarray(A, dtype=np.float64)
    d = a.shape[0]
    try:
        if d <= FULL_EIG_MAX_DIM:
            w = np.linalg.eigvalsh(a)
            return float(w[0]), float(w[-1])
        lo = scipy.linalg.eigh(a, eigvals_only=True, subset_by_index=[0, 0], driver="evr")
        hi = scipy.linalg.eigh(a, eigvals_only=True, subset_by_index=[d - 1, d - 1], driver="evr")
        return float(lo[0]), float(hi[0])
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise SolverError(f"eigenvalue solver failed: {exc}") from exc


def condition_number(A: CovMatrix) -> float:
    """kappa = |lambda_max| / |lambda_min| for a non-singular PSD matrix."""
    if not isinstance(A, CovMatrix):
        A = CovMatrix(A)
    if A.lambda_min <= A.psd_tol:
        raise SingularMatrixError(
            f"condition number undefined: lambda_min={A.lambda_min:.3g} is numerically zero"
        )
    return abs(A.lambda_max) / abs(A.lambda_min)


def matrix_norm(A, kind: str = "two") -> float:
    """Elementwise max (``inf``), Frobenius (``fro``) or spectral (``two``) norm."""
    a = _values(A)
    if kind == "inf":
        return float(np.max(np.abs(a)))
    if kind == "fro":
        return float(np.linalg.norm(a, "fro"))
    if kind == "two":
        lo, hi = eig_extremes(a)
        return max(abs(lo), abs(hi))
    raise ValueError(f"unknown norm kind {kind!r}; expected 'inf', 'fro' or 'two'")


def cholesky(A, jitter: bool = True) -> np.ndarray:
    """Lower-triangular ``L`` with ``A = L @ L.T``.

    Parameters
    ----------
    A : CovMatrix or SymMatrix
        Matrix to factor.
    jitter : bool
        If the smallest eigenvalue is within ``psd_tol`` of zero, add
        ``10 * psd_tol`` to the diagonal once before factoring.

    Raises
    ------
    FactorizationError
        If the (possibly repaired) matrix is not positive definite. The
        ``pivot`` attribute holds the zero-based index of the failing pivot.
    """
    a = _values(A)
    tol = psd_tol(a)
    if jitter:
        lmin = A.lambda_min if isinstance(A, CovMatrix) else eig_extremes(a)[0]
        if abs(lmin) <= tol:
            a = a + 10.0 * tol * np.eye(a.shape[0])
    c, info = lapack.dpotrf(a, lower=1, clean=1, overwrite_a=0)
    if info > 0:
        raise FactorizationError(
            f"Cholesky failed: leading minor at pivot {info - 1} is not positive definite",
            pivot=info - 1,
        )
    if info < 0:
        raise FactorizationError(f"Cholesky received an invalid argument ({info})")
    return c
