"""
Tests for the dense kernels: determinants, ranks, orthonormalisation,
nilpotency, Sylvester solves and polynomial roots with multiplicities.
"""
from __future__ import annotations

from itertools import combinations

import numpy as np
import pytest

from pencil_canon import densela
from pencil_canon.errors import (
    ComplexRootsError,
    DependentColumnsError,
    DimensionMismatchError,
    SingularMatrixError,
    SpectraOverlapError,
)
from pencil_canon.models import RealPoly


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def minor_rank(M: np.ndarray) -> int:
    """Size of the largest nonvanishing minor, by exhaustive scan"""
    rows, cols = M.shape
    for k in range(min(rows, cols), 0, -1):
        for r in combinations(range(rows), k):
            for c in combinations(range(cols), k):
                if round(np.linalg.det(M[np.ix_(r, c)].astype(float))) != 0:
                    return k
    return 0


# ---------------------------------------------------------------------------
# det / inverse / rank
# ---------------------------------------------------------------------------

class TestDeterminant:
    def test_known_values(self):
        assert densela.det(np.array([[2.0, 1.0], [1.0, 3.0]])) == pytest.approx(5.0)
        assert densela.det(np.array([[0.0, 1.0], [1.0, 0.0]])) == pytest.approx(-1.0)
        assert densela.det(np.zeros((0, 0))) == 1.0

    def test_singular_matrix_gives_exact_zero(self):
        M = np.array([[1.0, 2.0], [2.0, 4.0]])
        assert densela.det(M) == 0.0
        assert densela.det(np.zeros((3, 3))) == 0.0

    def test_matches_numpy(self, rng):
        for _ in range(50):
            M = rng.normal(size=(4, 4))
            assert densela.det(M) == pytest.approx(np.linalg.det(M), rel=1e-10)

    def test_rejects_non_square(self):
        with pytest.raises(DimensionMismatchError):
            densela.det(np.ones((2, 3)))


class TestInverse:
    def test_inverse(self, rng):
        M = rng.normal(size=(5, 5)) + 5 * np.eye(5)
        np.testing.assert_allclose(densela.inverse(M) @ M, np.eye(5), atol=1e-12)

    def test_singular_raises(self):
        with pytest.raises(SingularMatrixError):
            densela.inverse(np.array([[1.0, 1.0], [1.0, 1.0]]))
        with pytest.raises(SingularMatrixError):
            densela.inverse(np.zeros((2, 2)))


class TestRank:
    def test_rank_of_products(self, rng):
        """Rank of X @ Y with X n x r, Y r x n is r (200 randomised cases)"""
        for _ in range(200):
            n = int(rng.integers(2, 7))
            r = int(rng.integers(0, n + 1))
            M = rng.normal(size=(n, r)) @ rng.normal(size=(r, n))
            assert densela.rank(M) == r

    def test_rank_agrees_with_minor_scan(self, rng):
        """Largest nonvanishing minor of integer matrices with entries in [-3, 3] (200 cases)"""
        for case in range(200):
            n = int(rng.integers(1, 5))
            if case % 2:
                M = rng.integers(-3, 4, size=(n, n))
            else:
                r = int(rng.integers(0, min(n, 3) + 1))
                M = rng.integers(-1, 2, size=(n, r)) @ rng.integers(-1, 2, size=(r, n))
            assert densela.rank(M.astype(float)) == minor_rank(M)

    def test_empty_and_zero(self):
        assert densela.rank(np.zeros((3, 3))) == 0
        assert densela.rank(np.eye(4)) == 4


# ---------------------------------------------------------------------------
# gram_schmidt / rank_normal_form / cond
# ---------------------------------------------------------------------------

class TestGramSchmidt:
    def test_orthonormal_columns(self, rng):
        for _ in range(200):
            n = int(rng.integers(2, 8))
            k = int(rng.integers(1, n + 1))
            columns = list(rng.normal(size=(k, n)))
            Q = densela.gram_schmidt(columns)
            np.testing.assert_allclose(Q.T @ Q, np.eye(k), atol=1e-12)

    def test_spans_leading_columns(self, rng):
        V = rng.normal(size=(5, 3))
        Q = densela.gram_schmidt(list(V.T))
        # the first column keeps its direction
        np.testing.assert_allclose(Q[:, 0], V[:, 0] / np.linalg.norm(V[:, 0]))

    def test_dependent_columns(self):
        with pytest.raises(DependentColumnsError) as info:
            densela.gram_schmidt([np.array([1.0, 0.0]), np.array([2.0, 0.0])])
        assert info.value.details["column"] == 2


def test_rank_normal_form(rng):
    for _ in range(50):
        n = int(rng.integers(2, 6))
        r = int(rng.integers(0, n + 1))
        M = rng.normal(size=(n, r)) @ rng.normal(size=(r, n))
        P, Q, rank = densela.rank_normal_form(M)
        assert rank == r
        expected = np.diag([1.0] * r + [0.0] * (n - r))
        np.testing.assert_allclose(P @ M @ Q, expected, atol=1e-9)


def test_cond():
    assert densela.cond(np.eye(3)) == pytest.approx(1.0)
    assert densela.cond(np.diag([1.0, 1e-4])) == pytest.approx(1e4)


# ---------------------------------------------------------------------------
# nilpotency / sylvester
# ---------------------------------------------------------------------------

class TestNilpotency:
    def test_shift_matrix(self):
        assert densela.nilpotency_index(np.eye(3, k=1)) == 3
        assert densela.nilpotency_index(np.eye(4, k=2)) == 2

    def test_zero_matrix_has_index_one(self):
        assert densela.nilpotency_index(np.zeros((2, 2))) == 1

    def test_not_nilpotent(self):
        assert densela.nilpotency_index(np.eye(2)) is None

    def test_similarity_invariant(self, rng):
        S = rng.normal(size=(3, 3)) + 3 * np.eye(3)
        N = np.linalg.solve(S, np.eye(3, k=1) @ S)
        assert densela.nilpotency_index(N) == 3


class TestSylvester:
    def test_solution(self, rng):
        F = np.diag([1.0, 2.0]) + 0.1 * rng.normal(size=(2, 2))
        G = np.diag([-1.0, -2.0, -3.0])
        C = rng.normal(size=(2, 3))
        X = densela.sylvester_solve(F, G, C)
        np.testing.assert_allclose(F @ X - X @ G, C, atol=1e-12)

    def test_overlapping_spectra(self):
        with pytest.raises(SpectraOverlapError):
            densela.sylvester_solve(np.eye(2), np.eye(1), np.ones((2, 1)))

    def test_shape_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            densela.sylvester_solve(np.eye(2), -np.eye(2), np.ones((3, 2)))


# ---------------------------------------------------------------------------
# polynomials
# ---------------------------------------------------------------------------

class TestPolyRoots:
    def test_simple_roots(self):
        p = densela.poly_from_roots([(1.0, 1), (2.0, 1), (3.0, 1)])
        roots = densela.poly_roots(p)
        assert [k for _, k in roots] == [1, 1, 1]
        np.testing.assert_allclose([r for r, _ in roots], [1.0, 2.0, 3.0], atol=1e-10)

    def test_triple_root_is_clustered(self):
        p = densela.poly_from_roots([(2.0, 3), (-1.0, 1)], leading=0.5)
        roots = densela.poly_roots(p)
        assert [k for _, k in roots] == [1, 3]
        assert roots[0][0] == pytest.approx(-1.0, abs=1e-10)
        assert roots[1][0] == pytest.approx(2.0, abs=1e-8)

    def test_zero_root_multiplicity(self):
        p = RealPoly(np.array([0.0, 0.0, -1.0, 1.0]))
        assert densela.poly_roots(p) == [(0.0, 2), (1.0, 1)]

    def test_close_but_distinct_roots_stay_apart(self):
        p = densela.poly_from_roots([(1.0, 1), (1.01, 1)])
        roots = densela.poly_roots(p)
        assert len(roots) == 2

    def test_complex_roots(self):
        with pytest.raises(ComplexRootsError):
            densela.poly_roots(RealPoly(np.array([1.0, 0.0, 1.0])))

    def test_constant_has_no_roots(self):
        assert densela.poly_roots(RealPoly(np.array([3.0]))) == []

    def test_zero_polynomial_rejected(self):
        with pytest.raises(ValueError):
            densela.poly_roots(RealPoly(np.zeros(3)))

    def test_random_real_roots(self, rng):
        for _ in range(200):
            roots = sorted(rng.choice(np.arange(-6, 7), size=int(rng.integers(1, 5)), replace=False) * 0.75)
            p = densela.poly_from_roots([(float(r), 1) for r in roots], leading=float(rng.uniform(0.5, 2.0)))
            found = densela.poly_roots(p)
            assert [k for _, k in found] == [1] * len(roots)
            np.testing.assert_allclose([r for r, _ in found], roots, atol=1e-8)


def test_poly_eval_and_from_roots():
    p = densela.poly_from_roots([(1.0, 2)], leading=2.0)
    np.testing.assert_allclose(p.coefficients, [2.0, -4.0, 2.0])
    assert densela.poly_eval(p, 3.0) == pytest.approx(8.0)
    assert p(1.0) == 0.0


def test_chebyshev_nodes_inside_radius():
    nodes = densela.chebyshev_nodes(6, 2.5)
    assert len(nodes) == 6
    assert np.all(np.abs(nodes) < 2.5)
    assert len(set(np.round(nodes, 12))) == 6
