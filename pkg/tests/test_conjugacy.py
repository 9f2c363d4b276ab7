"""
Tests for combinatorial equivalence, conjugacy grids and quasisymmetric distortion.
"""

import math

import numpy as np
import pytest
from pydantic import ValidationError

from puzzlekit.conjugacy import (
    basin_conjugacy,
    build_conjugacy,
    check_combinatorial_equivalence,
    default_scales,
    detect_orientation,
    qs_constant,
)
from puzzlekit.errors import BadCorrespondence
from puzzlekit.families import create_logistic_map, create_quadratic_map, create_sine_map
from puzzlekit.orbits import find_periodic_orbits
from puzzlekit.precision import bracketed_root
from puzzlekit.schemas import ConjugacyGrid

LATTICE = np.linspace(0.0, 1.0, 1025)


@pytest.fixture(scope="module")
def sine():
    return create_sine_map(1.0)


@pytest.fixture(scope="module")
def sine_fixed_point():
    return bracketed_root(lambda t: math.sin(math.pi * t) - t, 0.6, 0.9)


class TestCombinatorics:
    """Test orientation and itinerary comparison"""

    def test_orientation(self, tent, chebyshev, logistic):
        """Test that a decreasing first lap reverses orientation"""
        assert detect_orientation(tent, logistic) == 1
        assert detect_orientation(tent, chebyshev) == -1

    def test_logistic_and_sine_equivalent(self, logistic, sine, sine_fixed_point):
        """Test that both full unimodal maps send the critical point onto 0 in two steps"""
        report = check_combinatorial_equivalence(logistic, sine, [0.0, 0.75], [0.0, sine_fixed_point])
        assert report.equivalent
        assert report.mismatch is None

    def test_different_kneading(self, logistic):
        """Test that r = 3.5 leaves the orbit of 1/2 where r = 4 lands on 0"""
        lower = create_logistic_map(3.5)
        report = check_combinatorial_equivalence(logistic, lower, [0.0, 0.75], [0.0, 1.0 - 1.0 / 3.5])
        assert not report.equivalent
        assert report.mismatch.step == 2
        assert report.mismatch.symbol_f is None
        assert report.mismatch.symbol_g == 0

    def test_size_mismatch(self, logistic, chebyshev):
        """Test that admissible sets must have equal size"""
        with pytest.raises(BadCorrespondence):
            check_combinatorial_equivalence(logistic, chebyshev, [0.0, 0.75], [2.0])


class TestConjugacyGrid:
    """Test grids matched by branch words"""

    def test_tent_to_chebyshev(self, tent, chebyshev):
        """Test that the tent map is conjugate to x^2 - 2 by 2 cos(pi x)"""
        grid = build_conjugacy(tent, chebyshev, [0.0, 2.0 / 3.0], [-1.0, 2.0], depth=6)
        assert grid.orientation == -1
        xs, ys = np.array(grid.xs), np.array(grid.ys)
        assert len(xs) > 2**6
        np.testing.assert_allclose(ys, 2.0 * np.cos(np.pi * xs), atol=1e-9)
        assert grid.residual < 1e-9

    def test_inequivalent_pair_refused(self, logistic):
        """Test that a grid needs combinatorial equivalence"""
        with pytest.raises(BadCorrespondence):
            build_conjugacy(logistic, create_logistic_map(3.5), [0.0, 0.75], [0.0, 1.0 - 1.0 / 3.5], depth=4)

    def test_grid_must_be_monotone(self):
        """Test that a non-monotone point map is invalid"""
        with pytest.raises(ValidationError):
            ConjugacyGrid(xs=[0.0, 0.5, 0.4], ys=[0.0, 0.5, 1.0], depth=1)

    def test_basin_conjugacy(self):
        """Test the right-side basin conjugacy of x^2 + 0.1 and x^2 + 0.2"""
        f, g = create_quadratic_map(0.1), create_quadratic_map(0.2)
        (p,) = [o for o in find_periodic_orbits(f, period_max=1) if o.is_attracting]
        (q,) = [o for o in find_periodic_orbits(g, period_max=1) if o.is_attracting]
        grid = basin_conjugacy(f, g, p, q, generations=8, samples=32)
        assert grid.xs[0] == pytest.approx(p.points[0])
        assert grid.ys[0] == pytest.approx(q.points[0])
        assert len(grid.xs) == 32 * 9 + 1
        assert all(b > a for a, b in zip(grid.ys, grid.ys[1:]))

    def test_basin_conjugacy_needs_positive_multipliers(self):
        """Test that attracting fixed points with negative multipliers are refused"""
        f, g = create_quadratic_map(-0.5), create_quadratic_map(-0.6)
        (p,) = [o for o in find_periodic_orbits(f, period_max=1) if o.is_attracting]
        (q,) = [o for o in find_periodic_orbits(g, period_max=1) if o.is_attracting]
        with pytest.raises(BadCorrespondence):
            basin_conjugacy(f, g, p, q)


class TestQuasisymmetry:
    """Test quasisymmetric constants of grids"""

    def test_affine_grid(self):
        """Test that an affine point map has kappa 1 and Holder exponent 1"""
        grid = ConjugacyGrid(xs=LATTICE.tolist(), ys=(3.0 * LATTICE + 1.0).tolist(), depth=10)
        report = qs_constant(grid)
        assert report.kappa_max == pytest.approx(1.0)
        assert report.holder_exponent == pytest.approx(1.0)
        assert [s.scale for s in report.per_scale] == default_scales(grid)

    def test_square_grid(self):
        """Test that x^2 reaches kappa 3 on the triple (0, t, 2t)"""
        grid = ConjugacyGrid(xs=LATTICE.tolist(), ys=(LATTICE**2).tolist(), depth=10)
        report = qs_constant(grid)
        assert report.kappa_max == pytest.approx(3.0)
        assert report.extreme_triple is not None

    def test_parabolic_triples_reported_apart(self):
        """Test that triples near a declared parabolic point leave kappa_max"""
        grid = ConjugacyGrid(xs=LATTICE.tolist(), ys=(LATTICE**2).tolist(), depth=10)
        report = qs_constant(grid, parabolic_points=[0.0])
        assert report.near_parabolic
        assert max(s.kappa for s in report.near_parabolic) == pytest.approx(3.0)
        assert report.kappa_max < 1.5

    def test_default_scales(self):
        """Test scales 1/2 down to four grid spacings"""
        grid = ConjugacyGrid(xs=LATTICE.tolist(), ys=LATTICE.tolist(), depth=10)
        assert default_scales(grid) == [2.0**-k for k in range(1, 9)]
