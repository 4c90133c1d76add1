import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from dcfsec.matana import (
    DEFAULT_TOL, SubspaceBasis, ToleranceProfile, chi_square_cdf, chi_square_quantile, intersection_basis,
    is_unstable, largest_invariant_subspace, null_space_basis, numeric_rank, orth_basis,
    range_intersection_nontrivial, regularized_gamma_p, spectral_radius,
)


def chi2_cdf_by_quadrature(x, df):
    """Independent oracle: integrate the chi-square density."""
    from math import gamma

    k = df / 2.0
    pdf = lambda t: t ** (k - 1) * np.exp(-t / 2) / (2 ** k * gamma(k))
    val, _ = integrate.quad(pdf, 0, x, limit=200)
    return val


def quantile_by_quadrature(df, conf):
    lo, hi = 0.0, 100.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if chi2_cdf_by_quadrature(mid, df) < conf:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


class TestRank:
    def test_identity(self):
        assert numeric_rank(np.eye(4)) == 4

    def test_zero_matrix(self):
        assert numeric_rank(np.zeros((3, 5))) == 0

    def test_empty(self):
        assert numeric_rank(np.zeros((0, 3))) == 0

    def test_near_singular_is_full_rank_above_cutoff(self):
        assert numeric_rank(np.diag([1.0, 1e-10])) == 2

    def test_below_cutoff_dropped(self):
        assert numeric_rank(np.diag([1.0, 1e-17])) == 1

    def test_tolerance_factor_raises_cutoff(self):
        M = np.diag([1.0, 1e-14])
        assert numeric_rank(M) == 2
        assert numeric_rank(M, ToleranceProfile(rank_tol_factor=1e4)) == 1

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 6), st.integers(0, 2**31 - 1))
    def test_rank_of_product(self, m, n, r, seed):
        r = min(r, m, n)
        rng = np.random.default_rng(seed)
        M = rng.standard_normal((m, r)) @ rng.standard_normal((r, n))
        assert numeric_rank(M) == r


class TestNullSpace:
    def test_row_vector(self):
        N = null_space_basis(np.array([[1.0, 0.0, 0.0]]))
        assert N.dim == 2
        assert np.allclose(N.basis[0], 0)

    def test_full_rank_has_empty_null(self):
        assert null_space_basis(np.eye(3)).is_empty

    def test_empty_rows_give_whole_space(self):
        assert null_space_basis(np.zeros((0, 4))).dim == 4

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 5), st.integers(1, 7), st.integers(0, 2**31 - 1))
    def test_annihilates_and_orthonormal(self, m, n, seed):
        M = np.random.default_rng(seed).standard_normal((m, n))
        N = null_space_basis(M).basis
        assert N.shape == (n, n - min(m, n))
        assert np.allclose(M @ N, 0, atol=1e-10)
        assert np.allclose(N.T @ N, np.eye(N.shape[1]), atol=1e-12)


class TestSubspaces:
    def test_span_dedupes(self):
        S = SubspaceBasis.span(np.array([[1.0, 2.0], [0.0, 0.0], [0.0, 0.0]]))
        assert S.dim == 1

    def test_basis_validation(self):
        with pytest.raises(ValueError):
            SubspaceBasis(np.zeros((2, 3)))

    def test_projector(self):
        S = SubspaceBasis(np.array([[1.0], [0.0]]))
        assert np.allclose(S.projector(), np.diag([1.0, 0.0]))

    def test_axes_intersection(self):
        U = np.array([[1.0, 0], [0, 1], [0, 0]])
        V = np.array([[0.0, 0], [1, 0], [0, 1]])
        I = intersection_basis(U, V)
        assert I.dim == 1
        assert np.allclose(abs(I.basis[:, 0]), [0, 1, 0])
        assert range_intersection_nontrivial(U, V)

    def test_transversal_lines(self):
        assert not range_intersection_nontrivial(np.array([[1.0], [0]]), np.array([[1.0], [1e-3]]))

    def test_empty_operand(self):
        assert intersection_basis(np.zeros((3, 0)), np.eye(3)).is_empty

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            range_intersection_nontrivial(np.eye(2), np.eye(3))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_intersection_dimension_formula(self, seed):
        # dim(U ∩ V) = dim U + dim V - dim(U + V) on generic draws with a planted common part
        rng = np.random.default_rng(seed)
        n = rng.integers(3, 7)
        k = rng.integers(0, n // 2 + 1)
        common = rng.standard_normal((n, k))
        U = np.hstack([common, rng.standard_normal((n, rng.integers(0, n - 2 * k + 1)))])
        V = np.hstack([common, rng.standard_normal((n, rng.integers(0, max(n - U.shape[1], 0) + 1)))])
        expected = U.shape[1] + V.shape[1] - numeric_rank(np.hstack([U, V]))
        I = intersection_basis(U, V)
        assert I.dim == expected
        if I.dim:
            for B in (orth_basis(U).basis, orth_basis(V).basis):
                assert np.allclose(B @ (B.T @ I.basis), I.basis, atol=1e-8)


class TestInvariant:
    def test_eigenvector_subspace(self):
        A = np.diag([2.0, 3.0, 4.0])
        V0 = np.array([[1.0, 0], [0, 1], [0, 0]])
        assert largest_invariant_subspace(A, V0).dim == 2

    def test_no_invariant_part(self):
        A = np.array([[0.0, 1.0], [1.0, 0.0]])
        assert largest_invariant_subspace(A, np.array([[1.0], [0.0]])).is_empty

    def test_shift_chain(self):
        A = np.diag([1.0, 1.0], k=-1)  # e1 -> e2 -> e3 -> 0
        V0 = np.eye(3)[:, 1:]
        I = largest_invariant_subspace(A, V0)
        assert I.dim == 2

    def test_bad_shapes(self):
        with pytest.raises(ValueError):
            largest_invariant_subspace(np.ones((2, 3)), np.eye(2))
        with pytest.raises(ValueError):
            largest_invariant_subspace(np.eye(3), np.eye(2))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_result_is_invariant_and_contained(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 6))
        A = rng.standard_normal((n, n))
        V0 = rng.standard_normal((n, int(rng.integers(1, n + 1))))
        I = largest_invariant_subspace(A, V0).basis
        if I.shape[1]:
            P = I @ I.T
            assert np.allclose(P @ (A @ I), A @ I, atol=1e-7)
            B = orth_basis(V0).basis
            assert np.allclose(B @ (B.T @ I), I, atol=1e-8)


class TestSpectral:
    def test_radius(self):
        assert spectral_radius(np.array([[0.0, 2.0], [-2.0, 0.0]])) == pytest.approx(2.0)

    def test_boundary_counts_as_stable(self):
        assert not is_unstable(np.eye(2))
        assert is_unstable(np.diag([1.0, 1.0 + 1e-9]))

    def test_non_square(self):
        with pytest.raises(ValueError):
            spectral_radius(np.ones((2, 3)))


class TestChiSquare:
    @pytest.mark.parametrize("df,expected", [(5, 11.07), (6, 12.59)])
    def test_reference_thresholds(self, df, expected):
        assert chi_square_quantile(df, 0.95) == pytest.approx(expected, abs=5e-3)

    def test_one_degree(self):
        # frozen from the quadrature oracle below
        assert chi_square_quantile(1, 0.95) == pytest.approx(3.841459, abs=1e-5)

    @pytest.mark.parametrize("df", range(1, 13))
    def test_matches_quadrature_oracle(self, df):
        assert abs(chi_square_quantile(df, 0.95) - quantile_by_quadrature(df, 0.95)) < 1e-2

    @pytest.mark.parametrize("df", [1, 3, 8])
    def test_cdf_matches_quadrature(self, df):
        for x in (0.3, 2.0, 9.0):
            assert chi_square_cdf(x, df) == pytest.approx(chi2_cdf_by_quadrature(x, df), abs=1e-9)

    def test_cdf_nonpositive(self):
        assert chi_square_cdf(0.0, 3) == 0.0
        assert chi_square_cdf(-1.0, 3) == 0.0

    @pytest.mark.parametrize("bad", [(0, 0.95), (2, 0.0), (2, 1.0), (1.5, 0.9)])
    def test_rejects_bad_arguments(self, bad):
        with pytest.raises(ValueError):
            chi_square_quantile(*bad)

    def test_gamma_arguments(self):
        with pytest.raises(ValueError):
            regularized_gamma_p(0.0, 1.0)
        with pytest.raises(ValueError):
            regularized_gamma_p(1.0, -1.0)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 40), st.floats(0.01, 0.999))
    def test_quantile_inverts_cdf(self, df, conf):
        assert chi_square_cdf(chi_square_quantile(df, conf), df) == pytest.approx(conf, abs=1e-9)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 30), st.floats(0.05, 0.9), st.floats(0.001, 0.09))
    def test_monotone_in_confidence(self, df, c, dc):
        assert chi_square_quantile(df, c) < chi_square_quantile(df, c + dc)


def test_default_tolerances_are_positive():
    with pytest.raises(ValueError):
        ToleranceProfile(fixpoint_tol=0.0)
    with pytest.raises(ValueError):
        ToleranceProfile(fixpoint_max_iters=0)
    assert DEFAULT_TOL.as_dict()["subspace_tol"] == 1e-9
