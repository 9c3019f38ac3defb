import math

import numpy as np
import pytest

from ramlab import linalg
from ramlab.errors import DimensionMismatch, DowndateFailure, NoConvergence, NotPositiveDefinite
from ramlab.linalg import (LowerTriangularFactor, SymmetricMatrix, cholesky_factorize, directional_radius,
                           rank_one_update, relative_frobenius_error, symmetric_eigenvalues, symmetric_power)


def _rotation(angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


class TestMatrixTypes:
    def test_symmetric_matrix_is_exactly_symmetric(self, np_rng):
        M = SymmetricMatrix(np_rng.standard_normal((5, 5)))
        assert np.array_equal(M.entries, M.entries.T)

    def test_symmetric_matrix_is_read_only(self):
        M = SymmetricMatrix.identity(2)
        with pytest.raises(ValueError):
            M.entries[0, 0] = 3.0

    def test_factor_rejects_upper_entries(self):
        with pytest.raises(ValueError):
            LowerTriangularFactor(np.array([[1.0, 0.5], [0.0, 1.0]]))

    def test_factor_rejects_nonpositive_diagonal(self):
        with pytest.raises(ValueError):
            LowerTriangularFactor(np.array([[1.0, 0.0], [0.3, 0.0]]))

    def test_gram_and_scaling(self):
        L = LowerTriangularFactor(np.array([[2.0, 0.0], [1.0, 3.0]]))
        np.testing.assert_allclose(L.gram().entries, [[4.0, 2.0], [2.0, 10.0]])
        np.testing.assert_allclose(L.scaled(0.5).entries, [[1.0, 0.0], [0.5, 1.5]])


class TestCholeskyFactorize:
    def test_identity(self):
        L = cholesky_factorize(SymmetricMatrix.identity(3))
        np.testing.assert_array_equal(L.entries, np.eye(3))

    def test_bivariate_student_pseudo_covariance(self):
        M = SymmetricMatrix(np.array([[0.2, 0.1], [0.1, 0.8]]))
        L = cholesky_factorize(M)
        assert L.entries[0, 0] == pytest.approx(math.sqrt(0.2), abs=1e-15)
        assert relative_frobenius_error(L.gram(), M) < 1e-12
        assert L.entries[0, 1] == 0.0

    def test_indefinite_reports_pivot(self):
        with pytest.raises(NotPositiveDefinite) as exc:
            cholesky_factorize(SymmetricMatrix(np.array([[1.0, 2.0], [2.0, 1.0]])))
        assert exc.value.pivot == 1

    def test_negative_diagonal(self):
        with pytest.raises(NotPositiveDefinite) as exc:
            cholesky_factorize(SymmetricMatrix(np.diag([1.0, -1.0, 2.0])))
        assert exc.value.pivot == 1

    def test_near_singular_pivot_rejected(self):
        M = np.array([[1.0, 1.0], [1.0, 1.0 + 1e-16]])
        with pytest.raises(NotPositiveDefinite):
            cholesky_factorize(SymmetricMatrix(M))

    def test_random_reconstruction(self, random_spd):
        for dim in (1, 2, 5, 16):
            M = SymmetricMatrix(random_spd(dim))
            L = cholesky_factorize(M)
            assert relative_frobenius_error(L.gram(), M) < 1e-12
            assert np.all(L.diagonal() > 0)


class TestRankOneUpdate:
    def test_zero_coefficient_returns_input(self):
        L = LowerTriangularFactor.identity(2)
        assert rank_one_update(L, [1.0, 0.0], 0.0) is L

    def test_update_along_axis(self):
        L = rank_one_update(LowerTriangularFactor.identity(2), [1.0, 0.0], 0.8)
        np.testing.assert_allclose(L.entries, np.diag([math.sqrt(1.8), 1.0]), atol=1e-15)

    def test_one_dimensional_downdate(self):
        L = rank_one_update(LowerTriangularFactor.identity(1), [1.0], -0.5)
        assert L.entries[0, 0] == pytest.approx(math.sqrt(0.5), rel=1e-15)

    def test_downdate_to_singular_fails(self):
        with pytest.raises(DowndateFailure):
            rank_one_update(LowerTriangularFactor.identity(2), [1.0, 0.0], -1.0)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            rank_one_update(LowerTriangularFactor.identity(2), [1.0, 0.0, 0.0], 0.5)

    def test_matches_refactorization_oracle(self, np_rng):
        worst = 0.0
        for _ in range(10_000):
            dim = int(np_rng.integers(1, 17))
            G = np_rng.standard_normal((dim, dim))
            L = cholesky_factorize(SymmetricMatrix(G @ G.T + np.eye(dim)))
            u = np_rng.standard_normal(dim)
            v = L.entries @ u / np.linalg.norm(u)
            a = float(np_rng.uniform(-0.99, 10.0))
            updated = rank_one_update(L, v, a)
            oracle = cholesky_factorize(SymmetricMatrix(L.entries @ L.entries.T + a * np.outer(v, v)))
            worst = max(worst, float(np.linalg.norm(updated.entries - oracle.entries)))
        assert worst < 1e-8

    def test_result_stays_positive_definite(self, np_rng):
        for _ in range(200):
            dim = int(np_rng.integers(1, 9))
            G = np_rng.standard_normal((dim, dim))
            L = cholesky_factorize(SymmetricMatrix(G @ G.T + 0.5 * np.eye(dim)))
            u = np_rng.standard_normal(dim)
            a = float(np_rng.uniform(-0.95, 5.0))
            updated = rank_one_update(L, L.entries @ u / np.linalg.norm(u), a)
            assert np.all(updated.diagonal() > 0)
            assert symmetric_eigenvalues(updated.gram())[0] > 0

    def test_inverse_pair_restores_factor(self, np_rng):
        # L(I + a·uuᵀ)Lᵀ followed by the factor (I − a/(1+a)·uuᵀ) in the same direction
        for _ in range(100):
            dim = int(np_rng.integers(1, 9))
            G = np_rng.standard_normal((dim, dim))
            L = cholesky_factorize(SymmetricMatrix(G @ G.T + np.eye(dim)))
            u = np_rng.standard_normal(dim)
            v = L.entries @ u / np.linalg.norm(u)
            a = float(np_rng.uniform(-0.9, 3.0))
            forward = rank_one_update(L, v, a)
            back = rank_one_update(forward, math.sqrt(1.0 + a) * v, -a / (1.0 + a))
            np.testing.assert_allclose(back.entries, L.entries, atol=1e-8)

    def test_additive_inverse(self):
        L = cholesky_factorize(SymmetricMatrix(np.array([[2.0, 0.3], [0.3, 1.0]])))
        v = np.array([0.4, -1.2])
        back = rank_one_update(rank_one_update(L, v, 2.5), v, -2.5)
        np.testing.assert_allclose(back.entries, L.entries, atol=1e-12)


class TestSymmetricEigenvalues:
    def test_diagonal(self):
        assert symmetric_eigenvalues(SymmetricMatrix.diagonal([3.0, 1.0, 2.0])) == pytest.approx([1, 2, 3])

    def test_two_by_two(self):
        assert symmetric_eigenvalues(SymmetricMatrix(np.array([[2.0, 1.0], [1.0, 2.0]]))) == pytest.approx(
            [1.0, 3.0], abs=1e-10)

    def test_recovers_constructed_spectrum(self):
        Q = _rotation(0.7)
        M = SymmetricMatrix(Q @ np.diag([0.5, 5.0]) @ Q.T)
        assert symmetric_eigenvalues(M) == pytest.approx([0.5, 5.0], abs=1e-10)

    def test_matches_lapack_and_trace(self, random_spd):
        for dim in (3, 8, 20, 64, 70):
            M = SymmetricMatrix(random_spd(dim))
            eig = symmetric_eigenvalues(M)
            np.testing.assert_allclose(eig, np.linalg.eigvalsh(M.entries), atol=1e-9 * max(1.0, eig[-1]))
            assert sum(eig) == pytest.approx(M.trace(), rel=1e-9)
            assert eig == sorted(eig)

    def test_sweep_cap_raises(self, monkeypatch):
        monkeypatch.setattr(linalg, "JACOBI_SWEEPS_PER_DIM", 0)
        M = SymmetricMatrix(np.array([[2.0, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 1.0]]))
        with pytest.raises(NoConvergence, match="0 sweeps"):
            symmetric_eigenvalues(M)

    def test_diagonal_input_converges_in_one_sweep(self, monkeypatch):
        monkeypatch.setattr(linalg, "JACOBI_SWEEPS_PER_DIM", 1)
        assert symmetric_eigenvalues(SymmetricMatrix.diagonal([2.0, 1.0, 3.0])) == pytest.approx([1.0, 2.0, 3.0])


class TestDirectionalRadius:
    def test_isotropic(self, np_rng):
        v = np_rng.standard_normal(2)
        assert directional_radius(LowerTriangularFactor.identity(2), v / np.linalg.norm(v)) == pytest.approx(1.0)

    def test_expanded_direction(self):
        L = LowerTriangularFactor(np.diag([math.sqrt(1.8), 1.0]))
        assert directional_radius(L, [1.0, 0.0]) == pytest.approx(math.sqrt(1.8))
        assert directional_radius(L, [0.0, 1.0]) == pytest.approx(1.0)

    def test_squared_radius_is_quadratic_form(self, np_rng, random_spd):
        L = cholesky_factorize(SymmetricMatrix(random_spd(4)))
        for _ in range(50):
            v = np_rng.standard_normal(4)
            v /= np.linalg.norm(v)
            assert directional_radius(L, v) ** 2 == pytest.approx(v @ L.gram().entries @ v, rel=1e-12)

    def test_requires_unit_vector(self):
        with pytest.raises(ValueError):
            directional_radius(LowerTriangularFactor.identity(2), [1.0, 1.0])


def test_symmetric_power_inverse_square_root(random_spd):
    M = SymmetricMatrix(random_spd(3, jitter=1.0))
    W = symmetric_power(M, -0.5).entries
    np.testing.assert_allclose(W @ M.entries @ W, np.eye(3), atol=1e-10)
