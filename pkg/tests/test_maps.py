"""
Tests for map definitions, evaluation and branch structure.
"""

import math

import mpmath
import numpy as np
import pytest

from puzzlekit.errors import DomainError, FormMismatch, MapDefinitionError
from puzzlekit.families import create_circle_map, create_quartic_unimodal_map
from puzzlekit.maps import (
    check_derivative_consistency,
    certify_monotone_branches,
    load_map,
    load_map_definition,
    parse_expression,
    rotation_number,
    verify_local_form,
)
from puzzlekit.precision import Precision
from puzzlekit.schemas import MapDefinition


class TestMapDefinitions:
    """Test loading and validating map definitions"""

    def test_load_map_file(self, sample_definition, write_map):
        """Test loading a definition file"""
        spec = load_map(write_map(sample_definition))
        assert spec.name == "chebyshev"
        assert spec.domain == (-2.0, 2.0)
        assert spec(0.0) == -2.0
        assert spec.is_polynomial

    def test_missing_file(self, tmp_path):
        """Test that an unreadable file is a map definition error"""
        with pytest.raises(MapDefinitionError):
            load_map(tmp_path / "absent.json")

    def test_invalid_definition(self, write_map):
        """Test that a definition with neither expression nor pieces is rejected"""
        with pytest.raises(MapDefinitionError, match="invalid map definition"):
            load_map(write_map({"domain": [0.0, 1.0]}))

    def test_unknown_symbol(self):
        """Test that expressions may only use x"""
        with pytest.raises(MapDefinitionError) as exc_info:
            parse_expression("a*x**2")
        assert exc_info.value.context["symbols"] == ["a"]

    def test_wrong_critical_order(self, sample_definition):
        """Test that a declared order contradicting the local form is caught"""
        sample_definition["critical_points"] = [{"x": 0.0, "order": 4}]
        with pytest.raises(FormMismatch):
            load_map_definition(MapDefinition.model_validate(sample_definition))

    def test_wrong_parity(self, sample_definition):
        """Test that a parity contradicting the order is rejected"""
        sample_definition["critical_points"] = [{"x": 0.0, "order": 2, "parity": "odd"}]
        with pytest.raises(MapDefinitionError):
            load_map_definition(MapDefinition.model_validate(sample_definition))

    def test_piecewise_not_c3(self):
        """Test that pieces meeting with a jump in the second derivative are rejected"""
        definition = MapDefinition(
            domain=(0.0, 1.0),
            pieces=[
                {"lower": 0.0, "upper": 0.5, "expression": "x"},
                {"lower": 0.5, "upper": 1.0, "expression": "x + (x - 0.5)**2"},
            ],
        )
        with pytest.raises(MapDefinitionError, match="C3"):
            load_map_definition(definition)

    def test_piecewise_with_kink(self, tent):
        """Test that declared kinks are turning points and split the laps"""
        assert tent.kinks == [0.5]
        assert tent.turning_points == [0.5]
        assert [lap.increasing for lap in tent.laps] == [True, False]
        assert tent(0.25) == pytest.approx(0.5)
        assert tent(0.75) == pytest.approx(0.5)
        assert not tent.is_polynomial

    def test_pickles_through_definition(self, chebyshev):
        """Test that a map rebuilds from its definition"""
        factory, args = chebyshev.__reduce__()
        rebuilt = factory(*args)
        assert rebuilt(1.5) == chebyshev(1.5)


class TestEvaluation:
    """Test evaluation backends and derivatives"""

    def test_derivatives(self, chebyshev):
        """Test exact derivatives of x^2 - 2"""
        assert chebyshev.evaluate(1.5) == pytest.approx(0.25)
        assert chebyshev.evaluate(1.5, 1) == pytest.approx(3.0)
        assert chebyshev.evaluate(1.5, 2) == pytest.approx(2.0)
        assert chebyshev.evaluate(1.5, 3) == 0.0

    def test_negative_derivative_order(self, chebyshev):
        """Test that a negative derivative order is rejected"""
        with pytest.raises(ValueError):
            chebyshev.evaluate(0.0, -1)

    def test_outside_domain(self, chebyshev):
        """Test that points outside the domain raise"""
        with pytest.raises(DomainError):
            chebyshev.evaluate(2.5)

    def test_extended_evaluation(self, chebyshev):
        """Test that extended precision evaluates in mpmath"""
        value = chebyshev.evaluate(0.1, precision=Precision(bits=128))
        assert isinstance(value, mpmath.mpf)

    def test_array_matches_scalar(self, logistic):
        """Test that the vectorised backend agrees with the scalar one"""
        xs = np.linspace(0.0, 1.0, 11)
        np.testing.assert_allclose(logistic.array(xs), [logistic(x) for x in xs], atol=1e-15)
        np.testing.assert_allclose(logistic.iterate_array(xs, 3), [logistic.iterate(x, 3) for x in xs], atol=1e-12)

    def test_iterate_derivative_chain_rule(self, chebyshev):
        """Test the derivative of the second iterate"""
        x = 0.3
        expected = chebyshev.derivative(x) * chebyshev.derivative(chebyshev(x))
        assert chebyshev.iterate_derivative(x, 2) == pytest.approx(expected)

    def test_schwarzian_of_quadratic(self, chebyshev):
        """Test that Sf = -3/(2x^2) for x^2 - 2"""
        assert chebyshev.schwarzian(0.5) == pytest.approx(-6.0)

    def test_complex_evaluation(self, chebyshev):
        """Test the polynomial complex extension"""
        assert chebyshev.complex_value(1j) == pytest.approx(-3.0)
        assert chebyshev.complex_derivative(1j) == pytest.approx(2j)

    def test_complex_needs_polynomial(self, tent):
        """Test that complex evaluation of a piecewise map raises"""
        with pytest.raises(MapDefinitionError):
            tent.complex_value(0.1j)


class TestBranches:
    """Test laps and inverse branches"""

    def test_laps(self, chebyshev):
        """Test the two laps of x^2 - 2"""
        left, right = chebyshev.laps
        assert (left.lo, left.hi, left.increasing) == (-2.0, 0.0, False)
        assert (right.lo, right.hi, right.increasing) == (0.0, 2.0, True)
        assert chebyshev.lap_index(0.0) == 0
        assert chebyshev.lap_index(1.0) == 1

    def test_lap_preimage(self, chebyshev):
        """Test inverse branches on both laps"""
        assert chebyshev.lap_preimage(1, 0.25) == pytest.approx(1.5)
        assert chebyshev.lap_preimage(0, 0.25) == pytest.approx(-1.5)
        assert chebyshev.lap_preimage(1, 3.0) is None
        assert len(chebyshev.preimages(0.0)) == 2

    def test_lap_preimage_array(self, chebyshev):
        """Test vectorised inverse branches with NaN outside the image"""
        roots = chebyshev.lap_preimage_array(1, np.array([-1.0, 0.25, 5.0]))
        assert roots[0] == pytest.approx(1.0, abs=1e-12)
        assert roots[1] == pytest.approx(1.5, abs=1e-12)
        assert math.isnan(roots[2])

    def test_reflection(self, logistic):
        """Test that the reflection is conjugate by x -> -x"""
        reflected = logistic.reflected()
        assert reflected.domain == (-1.0, 0.0)
        assert reflected(-0.3) == pytest.approx(-logistic(0.3))
        assert reflected.critical_points[0].location == pytest.approx(-0.5)
        assert [lap.increasing for lap in reflected.laps] == [False, True]

    def test_monotone_branch_certificates(self, chebyshev):
        """Test that both laps are certified with the right signs"""
        certificates = certify_monotone_branches(chebyshev)
        assert [c.sign for c in certificates] == [-1, 1]
        assert all(c.certified for c in certificates)
        assert [c.lap for c in certificates] == [0, 1]
        assert not any(c.split for c in certificates)

    def test_undeclared_turning_points_split_the_lap(self):
        """Test that sign changes of Df are located and every sub-branch is certified"""
        definition = MapDefinition(name="cubic-undeclared", domain=(-2.0, 2.0), expression="x**3 - 3*x")
        certificates = certify_monotone_branches(load_map_definition(definition))
        assert [c.sign for c in certificates] == [1, -1, 1]
        assert all(c.certified and c.split for c in certificates)
        assert [c.lap for c in certificates] == [0, 0, 0]
        assert certificates[0].interval.b == pytest.approx(-1.0, abs=1e-9)
        assert certificates[1].interval.a == certificates[0].interval.b
        assert certificates[2].interval.a == pytest.approx(1.0, abs=1e-9)


class TestChecks:
    """Test local form and derivative consistency checks"""

    def test_local_form_quadratic(self, chebyshev):
        """Test that the log-log slope at a quadratic critical point is 2"""
        report = verify_local_form(chebyshev, chebyshev.critical_points[0])
        assert report.passed
        assert report.order_estimate == pytest.approx(2.0, abs=0.05)

    def test_local_form_quartic(self):
        """Test that a quartic critical point is recognised"""
        spec = create_quartic_unimodal_map()
        report = verify_local_form(spec, spec.critical_points[0])
        assert report.passed
        assert report.order_estimate == pytest.approx(4.0, abs=0.05)

    def test_derivative_consistency_quadratic(self, chebyshev):
        """Test that central differences are exact for quadratics"""
        report = check_derivative_consistency(chebyshev)
        assert report.passed
        assert report.fitted_exponent is None

    def test_derivative_consistency_sine(self):
        """Test second order convergence of central differences for sin"""
        definition = MapDefinition(domain=(0.0, 1.0), expression="sin(pi*x)", critical_points=[{"x": 0.5, "order": 2}])
        report = check_derivative_consistency(load_map_definition(definition))
        assert report.passed
        assert report.fitted_exponent == pytest.approx(2.0, abs=0.1)

    def test_rotation_number(self):
        """Test the rotation number of a rigid rotation"""
        spec = create_circle_map(0.25)
        assert rotation_number(spec, n=1000) == pytest.approx(0.25)

    def test_rotation_number_needs_circle(self, chebyshev):
        """Test that interval maps have no rotation number"""
        with pytest.raises(DomainError):
            rotation_number(chebyshev)
