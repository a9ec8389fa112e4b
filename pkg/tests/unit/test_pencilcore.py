"""
Tests for the pencil profile: characteristic polynomials, spectrum and rank
profiles, the rank-degree classification and shift selection.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from pencil_canon.enums import PipelineStage, ShiftStrategy
from pencil_canon.errors import (
    ComplexRootsError,
    DegenerateStructureError,
    DimensionMismatchError,
    FullRankError,
    MultiplicityChangeError,
    NoShiftFoundError,
    RankChangeError,
    RootCollisionError,
    SingularPencilError,
)
from pencil_canon.helpers.deserializers import load_pencil
from pencil_canon.models import Box, Grid
from pencil_canon.pencilcore import (
    MatrixFunction,
    Pencil,
    analyze,
    char_poly,
    char_poly_at,
    char_poly_mu_at,
    choose_shift,
    rank_degree_classify,
    rank_profile,
    spectrum_profile,
)
from pencil_canon.settings import Settings

FIXTURES = Path(__file__).resolve().parents[2] / "pencils"


def make_pencil(A, B, intervals, points=5):
    m = len(intervals)
    return Pencil.on_box(
        MatrixFunction.from_strings(A, m),
        MatrixFunction.from_strings(B, m),
        Box(tuple(intervals)),
        points,
    )


@pytest.fixture
def ex1():
    return load_pencil(FIXTURES / "ex1.yaml")


@pytest.fixture
def ex2():
    return load_pencil(FIXTURES / "ex2.yaml")


# ---------------------------------------------------------------------------
# Grid
# ---------------------------------------------------------------------------

class TestGrid:
    def test_lexicographic_points_and_parents(self):
        grid = Grid(Box(((0.0, 1.0), (0.0, 1.0))), (3, 3))
        assert grid.size == 9
        np.testing.assert_allclose(grid.points[1], [0.0, 0.5])
        np.testing.assert_allclose(grid.points[3], [0.5, 0.0])
        assert grid.parents.tolist() == [-1, 0, 1, 0, 3, 4, 3, 6, 7]

    def test_axis_pairs(self):
        grid = Grid(Box(((0.0, 1.0), (0.0, 1.0))), (3, 3))
        first, second = grid.axis_pairs(1)
        assert first.tolist() == [0, 1, 3, 4, 6, 7]
        assert second.tolist() == [1, 2, 4, 5, 7, 8]

    def test_needs_three_points_per_axis(self):
        with pytest.raises(ValueError):
            Grid(Box(((0.0, 1.0),)), (2,))

    def test_box_validation(self):
        with pytest.raises(ValueError):
            Box(((1.0, 1.0),))


class TestPencilConstruction:
    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            make_pencil([["1", "0"], ["0", "1"]], [["1"]], [(0.0, 1.0)])

    def test_samples_are_tagged_on_fault(self):
        p = make_pencil([["1/(x1 - 0.5)", "0"], ["0", "0"]], [["1", "0"], ["0", "0"]], [(0.0, 1.0)])
        with pytest.raises(Exception) as info:
            _ = p.samples
        assert info.value.stage is PipelineStage.SAMPLE


# ---------------------------------------------------------------------------
# Characteristic polynomials
# ---------------------------------------------------------------------------

class TestCharPoly:
    def test_cross_check_with_determinants(self):
        """det(A + lambda*B) from interpolation agrees with direct determinants (200 cases)"""
        rng = np.random.default_rng(11)
        for _ in range(200):
            n = int(rng.integers(1, 6))
            A = rng.normal(size=(n, n))
            B = rng.normal(size=(n, n))
            if rng.random() < 0.5:
                B[:, -1] = 0.0
            p = char_poly(A, B)
            scale = (1.0 + np.linalg.norm(A) + np.linalg.norm(B)) ** n
            for lam in rng.uniform(-2.0, 2.0, size=3):
                assert abs(p(lam) - np.linalg.det(A + lam * B)) <= 1e-7 * scale

    def test_exact_structure_of_ex1(self, ex1):
        x = (1.0, 2.0)
        p = char_poly_at(ex1, x)
        # (x1 + x2 + lambda) * lambda * x1 * x2
        np.testing.assert_allclose(p.coefficients, [0.0, 6.0, 2.0], atol=1e-12)
        assert p.lowest_degree == 1
        assert p.degree == 2

    def test_mu_polynomial_of_ex1(self, ex1):
        p = char_poly_mu_at(ex1, (1.0, 2.0))
        # (1 + mu*(x1 + x2)) * mu * x1 * x2
        np.testing.assert_allclose(p.coefficients, [0.0, 2.0, 6.0], atol=1e-12)

    def test_identically_zero(self):
        p = char_poly(np.diag([1.0, 0.0]), np.diag([1.0, 0.0]))
        assert p.is_zero


# ---------------------------------------------------------------------------
# Spectrum profile
# ---------------------------------------------------------------------------

class TestSpectrumProfile:
    def test_ex1(self, ex1):
        sp = spectrum_profile(ex1)
        assert (sp.l, sp.d, sp.l_hat) == (1, 1, 1)
        assert sp.multiplicities == (1,)
        expected = -(ex1.grid.points[:, 0] + ex1.grid.points[:, 1])
        np.testing.assert_allclose(sp.branches[:, 0], expected, atol=1e-9)
        assert sp.warnings == []

    def test_ex2(self, ex2):
        sp = spectrum_profile(ex2)
        assert (sp.l, sp.d, sp.l_hat) == (1, 0, 2)
        assert sp.k == 0

    def test_singular_pencil(self):
        p = load_pencil(FIXTURES / "singular.yaml")
        with pytest.raises(SingularPencilError) as info:
            spectrum_profile(p)
        assert info.value.stage is PipelineStage.PROFILE

    def test_complex_roots(self):
        with pytest.raises(ComplexRootsError):
            spectrum_profile(load_pencil(FIXTURES / "complex.yaml"))

    def test_branch_collision(self):
        p = make_pencil([["x1", "0"], ["0", "1.5"]], [["1", "0"], ["0", "1"]], [(1.0, 2.0)])
        with pytest.raises(RootCollisionError):
            spectrum_profile(p)

    def test_degree_change(self):
        p = make_pencil(
            [["1", "0", "0"], ["0", "0", "0"], ["0", "0", "1"]],
            [["x1 - 1.5", "0", "0"], ["0", "1", "0"], ["0", "0", "0"]],
            [(1.0, 2.0)],
        )
        with pytest.raises(MultiplicityChangeError):
            spectrum_profile(p)

    def test_degenerate_structure(self):
        p = make_pencil([["x1", "0"], ["0", "0"]], [["1", "0"], ["0", "1"]], [(1.0, 2.0)])
        with pytest.raises(DegenerateStructureError):
            spectrum_profile(p)

    def test_steep_branch_on_coarse_grid_warns(self):
        sp = spectrum_profile(load_pencil(FIXTURES / "steep_branch.yaml"))
        assert sp.structure() == (1, 1, 1, (1,))
        assert len(sp.warnings) == 2
        assert all("Branch 1 jumps" in w and "along x1" in w for w in sp.warnings)
        assert "x=(1.5,)" in sp.warnings[0]
        assert "x=(1.75,)" in sp.warnings[1]

    def test_workers_do_not_change_the_result(self, ex1):
        serial = spectrum_profile(ex1, Settings(workers=1))
        threaded = spectrum_profile(ex1, Settings(workers=4))
        np.testing.assert_array_equal(serial.branches, threaded.branches)


# ---------------------------------------------------------------------------
# Ranks and classification
# ---------------------------------------------------------------------------

class TestRanks:
    def test_ex1_ranks(self, ex1):
        ranks = rank_profile(ex1)
        assert (ranks.rank_a, ranks.rank_b) == (2, 2)

    def test_rank_change(self):
        p = load_pencil(FIXTURES / "rank_change.yaml")
        with pytest.raises(RankChangeError) as info:
            rank_profile(p)
        assert info.value.details["matrix"] == "A"
        assert info.value.stage is PipelineStage.RANKS

    def test_full_rank_b(self):
        p = make_pencil([["x1", "0"], ["0", "0"]], [["1", "0"], ["0", "1"]], [(1.0, 2.0)])
        with pytest.raises(FullRankError) as info:
            rank_profile(p)
        assert info.value.details["matrix"] == "B"


class TestRankDegree:
    def test_ex1_satisfies_criterion(self, ex1):
        sp = spectrum_profile(ex1)
        rdc = rank_degree_classify(ex1, sp)
        assert rdc.satisfied
        assert rdc.simple_roots_flag
        assert (rdc.deg_lambda, rdc.deg_mu) == (2, 2)

    def test_ex2_fails_criterion(self, ex2):
        sp = spectrum_profile(ex2)
        rdc = rank_degree_classify(ex2, sp)
        assert rdc.rank_b == 2
        assert rdc.deg_lambda == 1
        assert not rdc.lambda_equality
        assert not rdc.satisfied


# ---------------------------------------------------------------------------
# Shift
# ---------------------------------------------------------------------------

class TestShift:
    def test_default_shift_is_one(self, ex1):
        shift = choose_shift(spectrum_profile(ex1), ex1)
        assert shift.strategy is ShiftStrategy.CONSTANT
        assert shift.constant == 1.0
        assert shift.root_margin == pytest.approx(3.0)

    def test_forced_shift(self, ex1):
        shift = choose_shift(spectrum_profile(ex1), ex1, forced=-1.0)
        assert shift.strategy is ShiftStrategy.FORCED
        np.testing.assert_array_equal(shift.values, -1.0)

    @pytest.mark.parametrize("forced", [0.0, -3.0])
    def test_forced_shift_rejected(self, ex1, forced):
        with pytest.raises(NoShiftFoundError) as info:
            choose_shift(spectrum_profile(ex1), ex1, forced=forced)
        assert info.value.details["margins"]

    def test_rejects_shift_hitting_a_root(self):
        # root branch -x1 sweeps through -1, so c = -1 must never be accepted
        p = make_pencil(
            [["x1", "0", "0"], ["0", "0", "0"], ["0", "0", "1"]],
            [["1", "0", "0"], ["0", "1", "0"], ["0", "0", "0"]],
            [(0.5, 1.5)],
        )
        sp = spectrum_profile(p)
        shift = choose_shift(sp, p)
        assert shift.root_margin > 1e-4
        assert np.all(np.abs(sp.branches[:, 0] - shift.values) > 1e-4)

    @staticmethod
    def weak_far_branch():
        # det(A + cB) = k(x) c (c + 10 x1), k = 1, 1, 0.2 on the grid; |det| at c = -5 x1 is 25, 56.25, 20
        # while every constant candidate (1, -1, -5, -21) falls to 15 or below somewhere
        return make_pencil(
            [["10*x1", "0", "0"], ["0", "1", "0"], ["0", "0", "0"]],
            [["1", "0", "0"], ["0", "0", "0"], ["0", "0", "1 - 3.2*(x1 - 1.5)*(x1 - 1)"]],
            [(1.0, 2.0)],
            points=3,
        )

    def test_falls_back_to_half_branch(self):
        p = self.weak_far_branch()
        sp = spectrum_profile(p)
        shift = choose_shift(sp, p, Settings(regularity_rtol=0.875))
        assert shift.strategy is ShiftStrategy.BRANCH_MEAN
        assert shift.constant is None
        np.testing.assert_allclose(shift.values, [-5.0, -7.5, -10.0], atol=1e-9)
        assert shift.det_margin == pytest.approx(20.0)

    def test_no_shift_when_half_branch_fails_too(self):
        p = self.weak_far_branch()
        with pytest.raises(NoShiftFoundError) as info:
            choose_shift(spectrum_profile(p), p, Settings(regularity_rtol=1.5))
        tried = info.value.details["margins"]
        assert [t["c"] for t in tried[:4]] == pytest.approx([1.0, -1.0, -5.0, -21.0])
        assert tried[4]["c"] is None
        assert tried[-1]["strategy"] == ShiftStrategy.BRANCH_MEAN.value


def test_analyze_runs_checks_in_order(ex1):
    analysis = analyze(ex1)
    assert analysis.spectrum.structure() == (1, 1, 1, (1,))
    assert analysis.spectrum.k == 1
    assert analysis.ranks.rank_a == 2
    assert analysis.classification.satisfied
    assert analysis.shift.constant == 1.0


def test_analyze_reports_rank_change_before_shift():
    with pytest.raises(RankChangeError):
        analyze(load_pencil(FIXTURES / "rank_change.yaml"))
