"""
Factories for the standard families used in experiments and tests.
"""

import math
from typing import Tuple

import mpmath
from scipy import optimize

from .errors import ConfigurationError
from .maps import MapSpec, load_map_definition
from .precision import Real
from .schemas import DomainKind, MapDefinition

# period-3 saddle-node parameter of x^2 + c
SADDLE_NODE_PERIOD_3 = -1.75


def _literal(value: Real) -> str:
    """Decimal literal carrying every bit of value into the expression"""
    if isinstance(value, mpmath.mpf):
        bits = max(53, int(value._mpf_[3]))
        with mpmath.workprec(bits + 8):
            return mpmath.nstr(value, int(bits * 0.302) + 3)
    return repr(float(value))


def power_family_bound(d: int, c: float) -> float:
    """Positive fixed point beta of x^d + c, so that [-beta, beta] is invariant"""
    if d == 2:
        disc = 1.0 - 4.0 * c
        if disc < 0:
            raise ConfigurationError("x^2 + c has no real fixed point", c=c)
        return 0.5 * (1.0 + math.sqrt(disc))
    left = (1.0 / d) ** (1.0 / (d - 1))
    g = lambda b: b**d - b + c  # noqa: E731
    if g(left) > 0:
        raise ConfigurationError("x^d + c has no real fixed point", d=d, c=c)
    return float(optimize.brentq(g, left, 4.0, xtol=1e-15))


def full_family_parameter(d: int) -> float:
    """c_* = -2^(1/(d-1)): the parameter where f(0) = -beta"""
    return -(2.0 ** (1.0 / (d - 1)))


def create_power_map(d: int, c: Real, verify: bool = True) -> MapSpec:
    """x^d + c on [-beta, beta] for even d and c in [c_*, 1/4-ish]"""
    if d < 2 or d % 2:
        raise ConfigurationError("power family needs an even degree >= 2", d=d)
    beta = power_family_bound(d, float(c))
    if float(c) < -beta - 1e-12:
        raise ConfigurationError("parameter below the full family", d=d, c=float(c))
    definition = MapDefinition(
        name=f"power-{d}",
        domain=(-beta, beta),
        expression=f"x**{d} + ({_literal(c)})",
        critical_points=[{"x": 0.0, "order": d}],
    )
    return load_map_definition(definition, verify=verify)


def create_quadratic_map(c: Real, verify: bool = True) -> MapSpec:
    return create_power_map(2, c, verify=verify)


def create_chebyshev_map() -> MapSpec:
    """x^2 - 2 on [-2, 2]"""
    return create_quadratic_map(-2.0)


def create_logistic_map(r: float = 4.0) -> MapSpec:
    if not 0 < r <= 4:
        raise ConfigurationError("logistic parameter must lie in (0, 4]", r=r)
    definition = MapDefinition(
        name=f"logistic-{r:g}",
        domain=(0.0, 1.0),
        expression=f"{r!r}*x*(1 - x)",
        critical_points=[{"x": 0.5, "order": 2}],
    )
    return load_map_definition(definition)


def create_sine_map(a: float = 1.0) -> MapSpec:
    definition = MapDefinition(
        name=f"sine-{a:g}",
        domain=(0.0, 1.0),
        expression=f"{a!r}*sin(pi*x)",
        critical_points=[{"x": 0.5, "order": 2}],
    )
    return load_map_definition(definition)


def create_tent_map(slope: float = 2.0) -> MapSpec:
    """Piecewise linear tent; the kink at 1/2 is its only turning point"""
    definition = MapDefinition(
        name=f"tent-{slope:g}",
        domain=(0.0, 1.0),
        pieces=[
            {"lower": 0.0, "upper": 0.5, "expression": f"{slope!r}*x"},
            {"lower": 0.5, "upper": 1.0, "expression": f"{slope!r}*(1 - x)"},
        ],
        kinks=[0.5],
    )
    return load_map_definition(definition)


def create_parabolic_germ(d: int, domain: Tuple[float, float] = (-0.25, 1.0)) -> MapSpec:
    """x + x^(d+1): parabolic fixed point at 0 with multiplicity d"""
    if d < 1:
        raise ConfigurationError("multiplicity must be >= 1", d=d)
    definition = MapDefinition(
        name=f"parabolic-{d}",
        domain=domain,
        expression=f"x + x**{d + 1}",
        parabolic=[{"point": 0.0, "period": 1, "multiplicity": d}],
    )
    return load_map_definition(definition)


def create_cubic_map(lam: float = 3.8) -> MapSpec:
    """Odd bimodal cubic lam x^3 - (lam - 1) x on [-1, 1]"""
    if not 1 < lam <= 4:
        raise ConfigurationError("cubic parameter must lie in (1, 4]", lam=lam)
    root = f"sqrt(({lam!r} - 1)/(3*{lam!r}))"
    definition = MapDefinition(
        name=f"cubic-{lam:g}",
        domain=(-1.0, 1.0),
        expression=f"{lam!r}*x**3 - ({lam!r} - 1)*x",
        critical_points=[{"x": f"-{root}", "order": 2}, {"x": root, "order": 2}],
    )
    return load_map_definition(definition)


def create_quartic_unimodal_map() -> MapSpec:
    """Full unimodal map 1 - (2x - 1)^4 with a critical point of order 4"""
    definition = MapDefinition(
        name="quartic-full",
        domain=(0.0, 1.0),
        expression="1 - (2*x - 1)**4",
        critical_points=[{"x": 0.5, "order": 4}],
    )
    return load_map_definition(definition)


def create_affine_map(
    slope: float, offset: float = 0.0, domain: Tuple[float, float] = (0.0, 1.0)
) -> MapSpec:
    if slope == 0:
        raise ConfigurationError("affine map needs a non-zero slope")
    definition = MapDefinition(
        name="affine",
        domain=domain,
        expression=f"{slope!r}*x + ({offset!r})",
    )
    return load_map_definition(definition)


def create_circle_map(omega: float, k: float = 0.0) -> MapSpec:
    """Degree-one lift x + omega - k/(2 pi) sin(2 pi x)"""
    definition = MapDefinition(
        name="arnold",
        domain=DomainKind.CIRCLE,
        expression=f"x + {omega!r} - {k!r}/(2*pi)*sin(2*pi*x)",
        degree=1,
    )
    return load_map_definition(definition)


def solve_superattracting_parameter(
    period: int, lo: float, hi: float, d: int = 2
) -> float:
    """Parameter c in [lo, hi] with f_c^period(0) = 0 for x^d + c"""

    def orbit_end(c: float) -> float:
        x = 0.0
        for _ in range(period):
            x = x**d + c
        return x

    return float(optimize.brentq(orbit_end, lo, hi, xtol=1e-15))

