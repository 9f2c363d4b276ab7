"""
Tests for the standard map families.
"""

import math

import pytest

from puzzlekit.errors import ConfigurationError
from puzzlekit.families import (
    SADDLE_NODE_PERIOD_3,
    create_affine_map,
    create_logistic_map,
    create_parabolic_germ,
    create_power_map,
    full_family_parameter,
    power_family_bound,
    solve_superattracting_parameter,
)


class TestPowerFamily:
    """Test the x^d + c family"""

    def test_quadratic_bound(self):
        """Test that [-beta, beta] is bounded by the positive fixed point"""
        assert power_family_bound(2, -2.0) == pytest.approx(2.0)
        assert power_family_bound(2, 0.0) == pytest.approx(1.0)

    def test_higher_degree_bound(self):
        """Test that beta is a fixed point of x^d + c"""
        beta = power_family_bound(4, -1.0)
        assert beta**4 - 1.0 == pytest.approx(beta)

    def test_full_family_parameter(self):
        """Test that the full family maps 0 to -beta"""
        for d in (2, 4, 6):
            c = full_family_parameter(d)
            assert c == pytest.approx(-(2.0 ** (1.0 / (d - 1))))
            assert c == pytest.approx(-power_family_bound(d, c), abs=1e-9)

    def test_odd_degree_rejected(self):
        """Test that the family needs an even degree"""
        with pytest.raises(ConfigurationError):
            create_power_map(3, -1.0)

    def test_parameter_without_fixed_point(self):
        """Test that x^2 + 1 has no invariant interval"""
        with pytest.raises(ConfigurationError):
            create_power_map(2, 1.0)

    def test_power_map_domain(self):
        """Test the invariant domain and critical point of x^4 + c"""
        spec = create_power_map(4, -1.0)
        beta = power_family_bound(4, -1.0)
        assert spec.domain == pytest.approx((-beta, beta))
        assert spec.critical_points[0].order == 4
        assert spec.is_polynomial

    def test_superattracting_parameter(self):
        """Test that the period-2 superattracting parameter of x^2 + c is -1"""
        assert solve_superattracting_parameter(2, -1.2, -0.8) == pytest.approx(-1.0)

    def test_saddle_node_constant(self):
        """Test the period-3 saddle-node parameter"""
        assert SADDLE_NODE_PERIOD_3 == -1.75


class TestOtherFamilies:
    """Test remaining factories"""

    def test_logistic_range(self):
        """Test that the logistic parameter must lie in (0, 4]"""
        with pytest.raises(ConfigurationError):
            create_logistic_map(4.5)

    def test_logistic_full(self, logistic):
        """Test that the full logistic map sends 1/2 to 1"""
        assert logistic(0.5) == pytest.approx(1.0)

    def test_parabolic_germ(self, parabolic_germ):
        """Test the declared parabolic point of x + x^2"""
        hint = parabolic_germ.parabolic_hints[0]
        assert hint.point == 0.0
        assert hint.multiplicity == 1
        assert parabolic_germ.derivative(0.0) == 1.0

    def test_parabolic_germ_multiplicity(self):
        """Test that the multiplicity must be positive"""
        with pytest.raises(ConfigurationError):
            create_parabolic_germ(0)

    def test_affine(self):
        """Test the affine factory"""
        spec = create_affine_map(2.0, domain=(0.0, 4.0))
        assert spec(1.5) == pytest.approx(3.0)
        assert spec.critical_points == []
        with pytest.raises(ConfigurationError):
            create_affine_map(0.0)

    def test_cubic_critical_points(self, cubic):
        """Test the two symmetric critical points of the bimodal cubic"""
        left, right = (c.location for c in cubic.critical_points)
        expected = math.sqrt(2.8 / (3 * 3.8))
        assert right == pytest.approx(expected)
        assert left == pytest.approx(-expected)
        assert len(cubic.laps) == 3
