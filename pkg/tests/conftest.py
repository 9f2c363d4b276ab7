"""
Shared test fixtures and configuration for puzzlekit tests.
"""

import json

import pytest
import structlog

from puzzlekit.families import (
    create_chebyshev_map,
    create_cubic_map,
    create_logistic_map,
    create_parabolic_germ,
    create_quadratic_map,
    create_tent_map,
)
from puzzlekit.precision import Precision


@pytest.fixture(autouse=True)
def binary64_environment(monkeypatch):
    """Tests run at binary64 unless they ask for more"""
    monkeypatch.delenv("PUZZLEKIT_PRECISION", raising=False)
    monkeypatch.delenv("PUZZLEKIT_LOG_LEVEL", raising=False)


@pytest.fixture(autouse=True)
def reset_logging():
    """The CLI binds structlog to the stderr of the test that ran it"""
    yield
    structlog.reset_defaults()


@pytest.fixture
def binary64():
    return Precision()


@pytest.fixture(scope="session")
def chebyshev():
    """x^2 - 2 on [-2, 2]"""
    return create_chebyshev_map()


@pytest.fixture(scope="session")
def logistic():
    return create_logistic_map(4.0)


@pytest.fixture(scope="session")
def tent():
    return create_tent_map(2.0)


@pytest.fixture(scope="session")
def superattracting_two():
    """x^2 - 1: the critical point has period 2"""
    return create_quadratic_map(-1.0)


@pytest.fixture(scope="session")
def parabolic_germ():
    """x + x^2 with a parabolic fixed point at 0"""
    return create_parabolic_germ(1)


@pytest.fixture(scope="session")
def cubic():
    return create_cubic_map(3.8)


@pytest.fixture
def sample_definition():
    """Quadratic Chebyshev map as written in a definition file"""
    return {
        "name": "chebyshev",
        "domain": [-2.0, 2.0],
        "expression": "x**2 - 2",
        "critical_points": [{"x": 0.0, "order": 2}],
    }


@pytest.fixture
def write_map(tmp_path):
    """Write a definition dict to a JSON file and return its path"""

    def write(definition, name="map.json"):
        path = tmp_path / name
        path.write_text(json.dumps(definition))
        return str(path)

    return write
