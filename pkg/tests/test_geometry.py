"""
Tests for cross-ratios, admissible metrics, niceness, length sums and Yoccoz profiles.
"""

import math

import pytest

from puzzlekit.errors import DegenerateConfiguration, NotAdmissible, NotDiffeomorphic
from puzzlekit.families import create_affine_map, create_quadratic_map
from puzzlekit.geometry import (
    admissible_metrics,
    bounded_geometry,
    cross_ratio,
    cross_ratio_distortion,
    gap,
    length_sum,
    nice_length_sum,
    nice_ratio,
    niceness_modulus,
    space,
    yoccoz_profile,
    yoccoz_profile_explicit,
)
from puzzlekit.nests import detect_cascades, principal_nest
from puzzlekit.orbits import fundamental_domain_chain, parabolic_escape_rate

GOLDEN = 0.5 * (1.0 + math.sqrt(5.0))
BASIN = (1.0 - GOLDEN, GOLDEN - 1.0)


class TestCrossRatios:
    """Test cross-ratios and their distortion"""

    def test_cross_ratio(self):
        """Test C((0, 4), (1, 3)) = 4 * 2 / (1 * 1)"""
        assert cross_ratio((0.0, 4.0), (1.0, 3.0)) == pytest.approx(8.0)
        assert space((0.0, 4.0), (1.0, 3.0)) == pytest.approx(0.125)

    def test_cross_ratio_needs_strict_inclusion(self):
        """Test that J touching the boundary of T is degenerate"""
        with pytest.raises(DegenerateConfiguration):
            cross_ratio((0.0, 4.0), (0.0, 3.0))

    def test_gap(self):
        """Test the gap of two disjoint intervals"""
        assert gap((0.0, 1.0), (2.0, 3.0)) == pytest.approx(3.0)
        assert gap((2.0, 3.0), (0.0, 1.0)) == pytest.approx(3.0)
        assert gap((0.0, 1.0), (1.0, 2.0)) == math.inf
        with pytest.raises(DegenerateConfiguration):
            gap((0.0, 2.0), (1.0, 3.0))

    def test_affine_distortion(self):
        """Test that affine maps preserve cross-ratios"""
        spec = create_affine_map(2.0, domain=(0.0, 4.0))
        report = cross_ratio_distortion(spec, (0.5, 1.5), (0.75, 1.25), 1)
        assert report.distortion == pytest.approx(1.0)
        assert report.intersection_multiplicity == 1
        assert report.max_length == pytest.approx(1.0)

    def test_negative_schwarzian_expands(self, chebyshev):
        """Test that x^2 - 2 expands the cross-ratio on a monotone branch"""
        report = cross_ratio_distortion(chebyshev, (0.5, 1.5), (0.9, 1.1), 1)
        assert report.cross_ratio == pytest.approx(1.25)
        assert report.distortion == pytest.approx(0.8 / (0.56 * 1.04) / 1.25)
        assert report.distortion > 1.0
        assert report.negative_schwarzian

    def test_critical_point_in_chain(self, chebyshev):
        """Test that a chain through the critical point is rejected"""
        with pytest.raises(NotDiffeomorphic):
            cross_ratio_distortion(chebyshev, (0.5, 1.5), (0.9, 1.1), 2)


class TestAdmissibleMetrics:
    """Test Gap, Space and centrality"""

    def test_component_without_critical_point(self, chebyshev):
        """Test that every component must hold one Omega point"""
        with pytest.raises(NotAdmissible):
            admissible_metrics(chebyshev, [(0.5, 1.0)], [0])

    def test_periodic_component(self, superattracting_two):
        """Test that the basin component of the 2-cycle is its own return domain"""
        metrics = admissible_metrics(superattracting_two, [BASIN], [0], horizon=50)
        assert metrics.domains == 1
        assert metrics.c2 == [0]
        assert metrics.c1 == []
        assert metrics.gap == math.inf
        assert metrics.space == math.inf
        landing = math.sqrt(GOLDEN) - 1.0 / GOLDEN
        image = 1.0 / GOLDEN**2
        assert metrics.cen2 == pytest.approx(abs(landing / image - 2.0), abs=1e-9)


class TestNiceness:
    """Test niceness ratios and length sums"""

    def test_nice_ratio(self):
        """Test the largest rho with (1 + 2 rho) L inside I"""
        assert nice_ratio((-1.0, 1.0), (-0.25, 0.25)) == pytest.approx(1.5)
        assert bounded_geometry((0.0, 4.0), 1.0) == pytest.approx(0.25)

    def test_niceness_of_periodic_component(self, superattracting_two):
        """Test that a component equal to its return domain has modulus 0"""
        report = niceness_modulus(superattracting_two, BASIN, horizon=40)
        assert report.rho_nice == pytest.approx(0.0, abs=1e-9)
        assert report.bounded_geometry == pytest.approx(0.5)
        assert report.samples >= 1

    def test_length_sum_of_fundamental_domains(self, parabolic_germ):
        """Test that fundamental domains of x + x^2 sum to at most their hull"""
        fit = parabolic_escape_rate(parabolic_germ, 0.0, 0.5, n=200)
        report = length_sum(fundamental_domain_chain(fit))
        assert report.exponent == 1.0
        assert 0.0 < report.total <= 0.5
        assert report.hypotheses["diffeomorphic"] == "checked"
        squared = length_sum(fundamental_domain_chain(fit), exponent=2.0)
        assert squared.total < report.total

    def test_nice_length_sum(self, chebyshev):
        """Test that entry domains of a nice set are summed with explicit thresholds stamped"""
        report = nice_length_sum(chebyshev, [(-1.0, 1.0)], alpha=0.5, horizon=100, samples=200)
        assert report.exponent == 1.5
        assert 0.0 < report.total <= 4.0
        assert report.hypotheses["nice"] == "checked"
        assert report.hypotheses["alpha"] == "0.5"
        assert report.hypotheses["avoids_basins"] == "unverified hypothesis"


class TestYoccozProfiles:
    """Test fundamental-domain profiles"""

    def test_explicit_profile_of_germ(self, parabolic_germ):
        """Test that backward orbits of x + x^2 have lengths comparable to 1/i^2"""
        profile = yoccoz_profile_explicit(parabolic_germ, 0.01, 0.5)
        assert profile.one_sided
        assert profile.constant <= 10.0
        assert profile.almost_parabolic
        assert all(b < a for a, b in zip(profile.lengths, profile.lengths[1:]))

    def test_cascade_profile(self):
        """Test the passage of f^3 through Z^1 just above the period-3 saddle-node"""
        spec = create_quadratic_map(-1.7499)
        alpha = 0.5 * (1.0 - math.sqrt(1.0 + 4.0 * 1.7499))
        nest = principal_nest(spec, (alpha, -alpha), depth=10)
        (cascade,) = detect_cascades(nest, spec)
        profile = yoccoz_profile(spec, cascade, sigma=1e-3)
        assert not profile.one_sided
        assert len(profile.lengths) >= 10
        assert profile.constant >= 1.0
        assert profile.base_length <= cascade.pieces[1].length
