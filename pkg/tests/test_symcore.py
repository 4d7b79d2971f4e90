import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from thermies.errors import FactorizationError, NotPSDError, SingularMatrixError, SymmetryError
from thermies.matio import data_path, load_matrix
from thermies.symcore import (
    CovMatrix,
    SymMatrix,
    cholesky,
    condition_number,
    devectorize_upper,
    eig_extremes,
    is_psd,
    matrix_norm,
    psd_tol,
    vectorize_upper,
)


def test_vectorize_2x2():
    v = vectorize_upper(SymMatrix([[1.0, 2.0], [2.0, 3.0]]))
    np.testing.assert_array_equal(v, [1.0, 2.0, 3.0])


def test_vectorize_1x1_and_identity():
    np.testing.assert_array_equal(vectorize_upper(SymMatrix([[5.0]])), [5.0])
    np.testing.assert_array_equal(vectorize_upper(SymMatrix(np.eye(3))), [1, 0, 0, 1, 0, 1])


@given(st.integers(1, 7), st.integers(0, 2**31))
def test_vectorize_roundtrip(d, seed):
    a = np.random.default_rng(seed).standard_normal((d, d))
    A = SymMatrix(a + a.T)
    v = vectorize_upper(A)
    assert v.size == d * (d + 1) // 2
    assert devectorize_upper(v) == A


def test_symmetrization_is_exact():
    a = np.array([[1.0, 0.3], [0.3 + 1e-12, 2.0]])
    A = SymMatrix(a)
    assert A.values[0, 1] == A.values[1, 0]


def test_asymmetry_rejected_with_indices():
    with pytest.raises(SymmetryError, match=r"\(0,1\)"):
        SymMatrix([[1.0, 2.0], [2.0001, 1.0]])


def test_values_read_only():
    A = SymMatrix(np.eye(2))
    with pytest.raises(ValueError):
        A.values[0, 0] = 3.0


def test_empty_and_nonsquare_rejected():
    with pytest.raises(SymmetryError):
        SymMatrix(np.zeros((2, 3)))
    with pytest.raises(SymmetryError):
        SymMatrix([[np.nan]])


@pytest.mark.parametrize(
    "a, expected",
    [(np.eye(3), True), ([[1, 2], [2, 1]], False), ([[1, 1], [1, 1]], True)],
)
def test_is_psd(a, expected):
    assert is_psd(SymMatrix(a), 0.0) is expected


def test_covmatrix_rejects_indefinite():
    with pytest.raises(NotPSDError):
        CovMatrix([[1, 2], [2, 1]])


def test_covmatrix_accepts_semidefinite_within_tol():
    C = CovMatrix([[1, 1], [1, 1]])
    assert abs(C.lambda_min) <= C.psd_tol
    assert is_psd(C, psd_tol(C.values))


@pytest.mark.parametrize(
    "a, lo, hi", [(np.diag([1.0, 4.0]), 1, 4), ([[3, 1], [1, 3]], 2, 4), ([[7.0]], 7, 7)]
)
def test_eig_extremes(a, lo, hi):
    got = eig_extremes(SymMatrix(a))
    assert got == pytest.approx((lo, hi), abs=1e-12)


def test_eig_extremes_large_matches_full():
    rng = np.random.default_rng(0)
    g = rng.standard_normal((100, 100))
    a = g + g.T
    lo, hi = eig_extremes(SymMatrix(a))
    full = np.linalg.eigvalsh(a)
    norm = np.max(np.abs(full))
    assert abs(lo - full[0]) <= 1e-8 * norm
    assert abs(hi - full[-1]) <= 1e-8 * norm


def test_condition_number_examples():
    assert condition_number(CovMatrix(np.eye(4))) == pytest.approx(1.0)
    assert condition_number(CovMatrix(np.diag([1.0, 10.0]))) == pytest.approx(10.0)
    assert condition_number(load_matrix(data_path("finance.mat"))) == pytest.approx(25.6, abs=0.1)


def test_condition_number_singular():
    with pytest.raises(SingularMatrixError):
        condition_number(CovMatrix([[1, 1], [1, 1]]))


@given(st.floats(1e-3, 1e3), st.integers(0, 2**31))
def test_condition_number_scale_invariant(c, seed):
    g = np.random.default_rng(seed).standard_normal((4, 4))
    A = CovMatrix(g @ g.T + np.eye(4))
    assert condition_number(A.scaled(c)) == pytest.approx(condition_number(A), rel=1e-9)
    assert condition_number(CovMatrix(c * A.values)) == pytest.approx(condition_number(A), rel=1e-9)


def test_matrix_norm_examples():
    assert matrix_norm(SymMatrix([[3.6, 1.3], [1.3, 3.5]]), "inf") == 3.6
    for kind in ("inf", "fro", "two"):
        assert matrix_norm(SymMatrix(np.zeros((3, 3))), kind) == 0.0
    assert matrix_norm(SymMatrix(np.eye(3)), "fro") == pytest.approx(math.sqrt(3))
    with pytest.raises(ValueError):
        matrix_norm(SymMatrix(np.eye(2)), "one")


@given(st.integers(1, 8), st.integers(0, 2**31))
def test_inf_norm_bounded_by_spectral(d, seed):
    g = np.random.default_rng(seed).standard_normal((d, d))
    A = SymMatrix(g + g.T)
    assert matrix_norm(A, "inf") <= math.sqrt(d) * matrix_norm(A, "two") * (1 + 1e-12)


def test_cholesky_examples():
    np.testing.assert_array_equal(cholesky(CovMatrix(np.eye(3))), np.eye(3))
    np.testing.assert_allclose(cholesky(CovMatrix(np.diag([4.0, 9.0]))), np.diag([2.0, 3.0]))
    A = CovMatrix([[3.0, 1.0], [1.0, 3.0]])
    L = cholesky(A)
    assert np.allclose(np.tril(L), L)
    assert np.max(np.abs(L @ L.T - A.values)) <= 1e-12


@settings(max_examples=30)
@given(st.integers(1, 64), st.integers(0, 2**31))
def test_cholesky_recomposition(d, seed):
    g = np.random.default_rng(seed).standard_normal((d, d))
    A = CovMatrix(g.T @ g + 1e-3 * np.eye(d))
    L = cholesky(A)
    err = np.linalg.norm(L @ L.T - A.values, "fro")
    assert err <= 1e-10 * np.linalg.norm(A.values, "fro")


def test_cholesky_jitter_on_semidefinite():
    A = CovMatrix([[1.0, 1.0], [1.0, 1.0]])
    L = cholesky(A)
    assert np.linalg.norm(L @ L.T - A.values) <= 1e-6
    with pytest.raises(FactorizationError) as info:
        cholesky(A, jitter=False)
    assert info.value.pivot == 1


def test_cholesky_indefinite_names_pivot():
    with pytest.raises(FactorizationError) as info:
        cholesky(SymMatrix([[1.0, 0.0, 0.0], [0.0, 1.0, 2.0], [0.0, 2.0, 1.0]]))
    assert info.value.pivot == 2
    assert "2" in str(info.value)
