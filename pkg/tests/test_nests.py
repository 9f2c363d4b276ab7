"""
Tests for principal nests, cascades, recurrence and the enhanced nest.
"""

import math
from types import SimpleNamespace

import pytest

from puzzlekit.errors import CascadeTooShort
from puzzlekit.families import create_quadratic_map
from puzzlekit.nests import (
    CascadeFrame,
    TransferPiece,
    _minimal_subset,
    annotate_cascades,
    classify_recurrence,
    count_children,
    critical_start_piece,
    detect_cascades,
    enhanced_cascade_nest,
    good_nest,
    interval_image,
    is_terminating,
    long_cascade_threshold,
    minimal_return_time,
    principal_nest,
    walk_enhanced_nest,
)
from puzzlekit.precision import Precision
from puzzlekit.schemas import CascadeRecord, CascadeType, NestRecord, RecurrenceKind, create_interval

GOLDEN = 0.5 * (1.0 + math.sqrt(5.0))

# just above the period-3 saddle-node: the critical orbit crawls through the channel
INTERMITTENT = -1.7499


@pytest.fixture(scope="module")
def intermittent():
    return create_quadratic_map(INTERMITTENT)


@pytest.fixture(scope="module")
def intermittent_start():
    """(alpha, -alpha) around 0 with alpha the orientation-reversing fixed point"""
    alpha = 0.5 * (1.0 - math.sqrt(1.0 - 4.0 * INTERMITTENT))
    return (alpha, -alpha)


@pytest.fixture(scope="module")
def intermittent_nest(intermittent, intermittent_start):
    return principal_nest(intermittent, intermittent_start, depth=10)


@pytest.fixture(scope="module")
def intermittent_cascade(intermittent, intermittent_nest):
    (cascade,) = detect_cascades(intermittent_nest, intermittent)
    return cascade


class TestIntervalHelpers:
    """Test images and return times of intervals"""

    def test_long_cascade_threshold(self):
        """Test max(8, 12 b^2 - 4 b)"""
        assert long_cascade_threshold(1) == 8
        assert long_cascade_threshold(2) == 40
        assert long_cascade_threshold(3) == 96

    def test_interval_image_with_turning_point(self, chebyshev):
        """Test that the image hull includes the critical value"""
        assert interval_image(chebyshev, (-1.0, 1.0)) == pytest.approx((-2.0, -1.0))

    def test_minimal_return_time(self, chebyshev):
        """Test that (-1, 1) first meets itself again after two steps"""
        assert minimal_return_time(chebyshev, (-1.0, 1.0)) == 2


class TestPrincipalNest:
    """Test the principal nest and terminating levels"""

    def test_start_must_contain_critical_point(self, chebyshev):
        """Test that the first level must hold c"""
        with pytest.raises(ValueError):
            principal_nest(chebyshev, (0.5, 1.0))

    def test_terminating_at_superattracting_cycle(self, superattracting_two):
        """Test that the immediate basin of the 2-cycle pulls back onto itself"""
        nest = principal_nest(superattracting_two, (1.0 - GOLDEN, GOLDEN - 1.0), depth=5)
        assert len(nest) == 1
        assert nest[0].return_time == 2
        assert nest[0].terminating
        assert nest[0].central

    def test_renormalization_witness(self, superattracting_two):
        """Test that a stalled nest yields a verified periodic interval"""
        witness = is_terminating(superattracting_two, (1.0 - GOLDEN, GOLDEN - 1.0))
        assert witness is not None
        assert witness.period == 2
        assert witness.disjoint_interiors
        assert witness.interval.as_tuple() == pytest.approx((1.0 - GOLDEN, GOLDEN - 1.0))

    def test_preperiodic_critical_point_has_no_start(self, chebyshev):
        """Test that a critical orbit landing on Z has no starting piece"""
        assert critical_start_piece(chebyshev, 0, Precision()) is None

    def test_levels_are_nested(self, intermittent_nest):
        """Test that every level sits inside the previous one and holds c"""
        assert len(intermittent_nest) == 10
        for rec in intermittent_nest:
            assert rec.piece.a < 0.0 < rec.piece.b
            assert rec.piece.a <= rec.child.a and rec.child.b <= rec.piece.b
            assert not rec.terminating
        for outer, inner in zip(intermittent_nest, intermittent_nest[1:]):
            assert inner.piece == outer.child

    def test_central_returns_in_channel(self, intermittent_nest):
        """Test that the orbit in the saddle-node channel returns centrally every 3 steps"""
        assert [rec.return_time for rec in intermittent_nest] == [3] * 10
        assert all(rec.central and not rec.non_central for rec in intermittent_nest)


class TestCascades:
    """Test cascade detection and annotation"""

    def test_single_maximal_cascade(self, intermittent_cascade):
        """Test that ten equal return times form one cascade of length nine"""
        assert intermittent_cascade.start_level == 0
        assert intermittent_cascade.length == 9
        assert intermittent_cascade.return_time == 3
        assert len(intermittent_cascade.pieces) == 11
        assert intermittent_cascade.maximal

    def test_saddle_node_cascade_is_low(self, intermittent_cascade):
        """Test that f^3(c) and f^3 of the boundary of Z^1 lie on the same side of c"""
        assert intermittent_cascade.cascade_type == CascadeType.LOW
        assert intermittent_cascade.fixed_points == {}
        assert intermittent_cascade.escape_times["0"] >= 1

    def test_first_level_run_is_unwitnessed(self, intermittent_cascade):
        """Test that a run starting at level 0 counts as maximal with no level to witness it"""
        assert intermittent_cascade.maximal
        assert not intermittent_cascade.maximal_witnessed

    @pytest.mark.parametrize("outer_return, maximal", [(1, True), (5, False)])
    def test_level_above_decides_maximality(self, intermittent, intermittent_nest, outer_return, maximal):
        """Test that a level above the run witnesses maximality by returning sooner"""
        outer = NestRecord(
            level=0,
            piece=create_interval(-1.9, 1.9),
            return_time=outer_return,
            child=intermittent_nest[0].piece,
            central=True,
        )
        shifted = [rec.model_copy(update={"level": rec.level + 1}) for rec in intermittent_nest]
        (cascade,) = detect_cascades([outer] + shifted, intermittent)
        assert cascade.start_level == 1
        assert cascade.length == 9
        assert cascade.maximal == maximal
        assert cascade.maximal_witnessed

    def test_annotate_cascades(self, intermittent_nest, intermittent_cascade):
        """Test that every level of the run carries the cascade id"""
        annotated = annotate_cascades(intermittent_nest, [intermittent_cascade])
        assert [rec.cascade_id for rec in annotated] == [0] * 10
        assert intermittent_nest[0].cascade_id is None

    def test_no_cascade_without_repeats(self, intermittent, intermittent_nest):
        """Test that a single level is not a cascade"""
        assert detect_cascades(intermittent_nest[:1], intermittent) == []


class TestRecurrence:
    """Test children counts and recurrence verdicts"""

    def test_children_of_periodic_critical_point(self, superattracting_two):
        """Test that only the first return of a periodic orbit is a child"""
        children = count_children(superattracting_two, (1.0 - GOLDEN, GOLDEN - 1.0), horizon=20)
        assert children == [2]

    def test_in_basin_verdict(self, superattracting_two):
        """Test that a critical point on an attracting cycle lies in Omega_0"""
        verdict = classify_recurrence(superattracting_two, horizon=200, period_max=2)
        assert verdict.verdicts[0].kind == RecurrenceKind.IN_BASIN
        assert verdict.omega0 == [0]
        assert verdict.omega1 == []

    def test_non_recurrent_verdict(self, chebyshev):
        """Test that 0 -> -2 -> 2 is non-recurrent"""
        verdict = classify_recurrence(chebyshev, horizon=200, period_max=2)
        assert verdict.verdicts[0].kind == RecurrenceKind.NON_RECURRENT
        assert verdict.omega2 == [0]

    def test_minimal_subset(self):
        """Test one representative per class not accumulated on from outside"""
        assert _minimal_subset([0, 1], [(0, 1), (1, 0)]) == [0]
        assert _minimal_subset([0, 1], [(0, 1)]) == [0]
        assert _minimal_subset([0, 1], []) == [0, 1]


class TestGoodNest:
    """Test the good nest"""

    def test_one_piece_per_critical_point(self, cubic):
        """Test that the starting pieces must match the critical points"""
        with pytest.raises(ValueError):
            good_nest(cubic, [(-0.1, 0.1)])

    def test_collapsed_step_terminates(self, superattracting_two):
        """Test that a periodic critical point collapses W onto V and stops the nest"""
        nest = good_nest(superattracting_two, [(1.0 - GOLDEN, GOLDEN - 1.0)], horizon=200)
        assert nest.truncated
        assert nest.reason == "terminating"
        assert len(nest.levels) == 1
        assert nest.levels[0].steps[0].collapsed
        assert nest.levels[0].cascade_bound_ok


class ScriptedFrame:
    """Symmetric pieces (-h, h) shrinking by fixed ratios; every time doubles per step"""

    def __init__(self, hat_ratio=0.5, doubling=True, close_below=None):
        self.z = [(-1.0, 1.0), (-0.5, 0.5), (-0.25, 0.25)]
        self.tol = 0.0
        self.c0 = 0.0
        self.gamma_limit = 5
        self.cascade = SimpleNamespace(length=10)
        self.hat_ratio = hat_ratio
        self.doubling = doubling
        self.close_below = close_below
        self.generation = 0

    def _time(self):
        return 2**self.generation if self.doubling else 2

    def landing(self, I, y):
        return 1, (0.9 * I[0], 0.9 * I[1])

    def T(self, I):
        if self.close_below is not None and I[1] < self.close_below:
            return TransferPiece((0.5 * I[0], 0.5 * I[1]), 3, True)
        return TransferPiece(I, 0, False)

    def A(self, I):
        self.generation += 1
        return (0.8 * I[0], 0.8 * I[1]), self._time()

    def B(self, I):
        return (0.9 * I[0], 0.9 * I[1]), self._time()

    def A_hat(self, I):
        return (self.hat_ratio * I[0], self.hat_ratio * I[1]), 1

    def Gamma(self, I):
        return (0.95 * I[0], 0.95 * I[1]), self._time(), False

    def short_step(self, I):
        return self.A_hat(I)

    def return_time(self, J):
        return 100

    def chain_order(self, target, time):
        return 1

    def is_close(self, J):
        return J[0] < -0.25 and J[1] > 0.25


class TestEnhancedNest:
    """Test the enhanced nest above a long cascade"""

    def test_short_cascade_rejected(self, intermittent, intermittent_cascade):
        """Test that cascades below the threshold are refused"""
        short = CascadeRecord(
            cascade_id=0,
            start_level=0,
            length=3,
            return_time=3,
            pieces=intermittent_cascade.pieces[:5],
            cascade_type=CascadeType.LOW,
            maximal=True,
        )
        with pytest.raises(CascadeTooShort) as exc_info:
            enhanced_cascade_nest(intermittent, (-1.0, 1.0), short)
        assert exc_info.value.context["threshold"] == 8

    def test_cascade_top_short_step(self, intermittent, intermittent_start, intermittent_cascade):
        """Test that from Z^0 itself the short step gives E = L_c0(Z^0) = Z^1"""
        enhanced = enhanced_cascade_nest(intermittent, intermittent_start, intermittent_cascade)
        assert enhanced.cascade_length == 9
        (step,) = enhanced.steps
        assert step.rule == "short-step"
        assert step.pullback_time == 3
        assert step.chain_order == 1
        assert enhanced.e_piece.as_tuple() == pytest.approx(intermittent_cascade.pieces[1].as_tuple())
        assert enhanced.e_close
        assert enhanced.max_chain_order == 1
        assert enhanced.doubling_ok and enhanced.return_bound_ok

    def test_transfer_piece_unicritical(self, intermittent, intermittent_start, intermittent_cascade):
        """Test that T(Z^0) ends at once on L_c0(Z^0) with the cascade return time"""
        frame = CascadeFrame(intermittent, intermittent_cascade)
        top = frame.T(intermittent_start)
        assert top.close
        assert top.time == 3
        assert top.piece[0] == pytest.approx(intermittent_cascade.pieces[1].a)

    def test_gamma_steps_then_short_step(self):
        """Test two full Gamma^5 B A steps followed by a short step"""
        enhanced = walk_enhanced_nest(ScriptedFrame(), (-8.0, 8.0))
        assert [step.rule for step in enhanced.steps] == ["gamma", "gamma", "short-step"]
        assert [step.gamma_steps for step in enhanced.steps] == [5, 5, 0]
        assert [step.pullback_time for step in enhanced.steps] == [14, 28, 17]
        assert enhanced.steps[1].piece.b == pytest.approx(8.0 * 0.72 * 0.95**5)
        assert enhanced.e_piece.b == pytest.approx(0.5 * 8.0 * 0.72**3 * 0.95**10)
        assert enhanced.e_close
        assert enhanced.doubling_ok
        assert enhanced.return_bound_ok
        assert enhanced.relations_hold

    def test_stalled_times_break_doubling(self):
        """Test that equal pullback times on consecutive steps are reported"""
        enhanced = walk_enhanced_nest(ScriptedFrame(doubling=False), (-8.0, 8.0))
        assert [step.pullback_time for step in enhanced.steps[:2]] == [14, 14]
        assert not enhanced.doubling_ok
        assert not enhanced.relations_hold

    def test_short_step_after_gamma(self):
        """Test that the first T with A-hat(Gamma^T B A) inside Z^0 ends the nest"""
        enhanced = walk_enhanced_nest(ScriptedFrame(hat_ratio=0.2), (-8.0, 8.0))
        (step,) = enhanced.steps
        assert step.rule == "gamma-short-step"
        assert step.gamma_steps == 3
        assert step.pullback_time == 2 + 2 + 3 * 2 + 1

    def test_close_after_A(self):
        """Test that E = T A(I) once the transfer of A(I) ends close to Z^0"""
        enhanced = walk_enhanced_nest(ScriptedFrame(close_below=6.5), (-8.0, 8.0))
        (step,) = enhanced.steps
        assert step.rule == "close-after-A"
        assert step.pullback_time == 2 + 3
        assert enhanced.e_piece.b == pytest.approx(3.2)

    def test_depth_limit_leaves_e_undefined(self):
        """Test that a walk cut by depth has no E piece"""
        enhanced = walk_enhanced_nest(ScriptedFrame(), (-8.0, 8.0), depth=1)
        assert enhanced.e_piece is None
        assert not enhanced.e_close
        assert [step.rule for step in enhanced.steps] == ["gamma"]
