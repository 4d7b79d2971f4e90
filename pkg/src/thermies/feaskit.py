"""Feasibility of ensemble mitigation for ill-conditioned targets.

With ``lambda_min = d * eps`` every nearest neighbor is PSD and entries stay
below ``kappa d^(3/2) eps + eps`` in magnitude, which fixes the signed bit
depth the device needs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import SingularMatrixError
from .symcore import CovMatrix

__all__ = [
    "FeasibilityPoint",
    "required_bit_depth",
    "feasible_kappa_max",
    "is_feasible",
    "scale_for_feasibility",
    "feasibility_table",
]

_BOUNDARY_TOL = 1e-12


def required_bit_depth(d: int, kappa: float) -> int:
    """ceil(log2(2 kappa d^(3/2) + 4)); values within 1e-12 of an integer round down."""
    if d < 1 or kappa < 1:
        raise ValueError("need d >= 1 and kappa >= 1")
    v = math.log2(2.0 * kappa * d**1.5 + 4.0)
    nearest = round(v)
    if abs(v - nearest) <= _BOUNDARY_TOL:
        return int(nearest)
    return int(math.ceil(v))


def feasible_kappa_max(d: int, xi: int) -> float:
    """Largest condition number feasible at bit depth ``xi``: (2^(xi-1) - 2) / d^(3/2).

    A result below 1 means no target of dimension ``d`` fits.
    """
    if d < 1 or xi < 3:
        raise ValueError("need d >= 1 and xi >= 3")
    return (2.0 ** (xi - 1) - 2.0) / d**1.5


def is_feasible(d: int, kappa: float, xi: int) -> bool:
    """2^(xi-1) - 1 >= kappa d^(3/2) + 1, with the same 1e-12 boundary slack as the bit depth."""
    return kappa * d**1.5 + 1.0 <= (2.0 ** (xi - 1) - 1.0) * (1.0 + _BOUNDARY_TOL)


@dataclass(frozen=True)
class FeasibilityPoint:
    d: int
    kappa: float
    xi: int

    def __post_init__(self):
        if self.xi < 2:
            raise ValueError("bit depth must be >= 2")

    @property
    def feasible(self) -> bool:
        return is_feasible(self.d, self.kappa, self.xi)


def scale_for_feasibility(target: CovMatrix, epsilon: float) -> tuple[CovMatrix, float]:
    """Rescale so that lambda_min = d * eps; returns the scaled matrix and the factor."""
    if not isinstance(target, CovMatrix):
        target = CovMatrix(target)
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if target.lambda_min <= target.psd_tol:
        raise SingularMatrixError("cannot normalize a singular target")
    scale = target.dim * epsilon / target.lambda_min
    return target.scaled(scale), scale


def feasibility_table(d_max: int, bit_depths=(8, 16, 32)) -> list[tuple[int, int, float]]:
    """Rows (d, xi, kappa_max) for d = 1..d_max and each bit depth."""
    return [(d, xi, feasible_kappa_max(d, xi)) for xi in bit_depths for d in range(1, d_max + 1)]
