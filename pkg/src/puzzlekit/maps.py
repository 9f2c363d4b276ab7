"""
Class-C maps of an interval or of the circle.

A MapSpec is compiled once from a MapDefinition: the expression is parsed with
sympy, differentiated exactly and lambdified for three backends (``math`` for
binary64 scalars, ``numpy`` for vectorised sweeps, ``mpmath`` for extended
precision). The backend is picked from the type of the argument, so code that
iterates inside ``Precision.activate()`` with mpf values stays extended.
"""

import json
import math
from pathlib import Path
from typing import Any, Callable, Dict, List, NamedTuple, Optional, Tuple, Union

import mpmath
import numpy as np
import structlog
import sympy as sp
from pydantic import ValidationError
from scipy import stats

from .errors import DomainError, FormMismatch, MapDefinitionError
from .precision import Precision, Real, bracketed_root, resolve_precision, vectorized_bisect
from .schemas import (
    BranchCertificate,
    CriticalPoint,
    DerivativeConsistencyReport,
    DomainKind,
    LocalFormReport,
    MapDefinition,
    ParabolicSpec,
    PieceSpec,
    create_critical_point,
    create_interval,
)

logger = structlog.get_logger(__name__)

X = sp.Symbol("x", real=True)

_LOCALS: Dict[str, Any] = {
    "x": X,
    "sin": sp.sin,
    "cos": sp.cos,
    "tan": sp.tan,
    "exp": sp.exp,
    "log": sp.log,
    "sqrt": sp.sqrt,
    "pi": sp.pi,
    "abs": sp.Abs,
    "Abs": sp.Abs,
}

C3_TOLERANCE = 1e-9
LOCAL_FORM_TOLERANCE = 0.05


class Lap(NamedTuple):
    """Maximal closed interval on which the map is strictly monotone"""

    lo: float
    hi: float
    increasing: bool


def parse_expression(text: str) -> sp.Expr:
    """Parse a map expression in the variable x"""
    try:
        expr = sp.sympify(text, locals=_LOCALS)
    except (sp.SympifyError, SyntaxError, TypeError) as exc:
        raise MapDefinitionError(f"cannot parse expression {text!r}", expression=text) from exc
    extra = expr.free_symbols - {X}
    if extra:
        raise MapDefinitionError(
            "expression may only use the variable x",
            expression=text,
            symbols=sorted(str(s) for s in extra),
        )
    return expr


def _parse_real(value: Union[float, str]) -> Tuple[float, sp.Expr]:
    if isinstance(value, str):
        expr = parse_expression(value)
        if expr.free_symbols:
            raise MapDefinitionError("point expressions must be constant", expression=value)
        return float(sp.N(expr, 30)), expr
    return float(value), sp.Float(value)


class MapSpec:
    """Compiled class-C map with exact derivatives"""

    def __init__(self, definition: MapDefinition):
        self.definition = definition
        self.name = definition.name
        self.is_circle = definition.domain == DomainKind.CIRCLE
        self.degree = definition.degree
        if self.is_circle:
            self.domain: Tuple[float, float] = (0.0, 1.0)
        else:
            lo, hi = definition.domain  # type: ignore[misc]
            self.domain = (float(lo), float(hi))

        self.kinks: List[float] = sorted(float(k) for k in definition.kinks)
        if definition.pieces is not None:
            self.expression = self._build_piecewise(definition.pieces)
        else:
            self.expression = parse_expression(definition.expression or "")

        self.critical_points: List[CriticalPoint] = []
        self._critical_exact: List[sp.Expr] = []
        for spec in sorted(definition.critical_points, key=lambda s: _parse_real(s.x)[0]):
            location, exact = _parse_real(spec.x)
            try:
                point = create_critical_point(location, spec.order, str(spec.x))
            except ValidationError as exc:
                raise MapDefinitionError(str(exc), point=str(spec.x)) from exc
            if spec.parity is not None and spec.parity != point.parity:
                raise MapDefinitionError(
                    "declared parity does not match order", point=location, order=spec.order
                )
            self.critical_points.append(point)
            self._critical_exact.append(exact)

        self.parabolic_hints: List[ParabolicSpec] = list(definition.parabolic)
        self._derivatives: List[sp.Expr] = [self.expression]
        self._compiled: Dict[Tuple[int, str], Callable[..., Any]] = {}
        self._coefficients = self._polynomial_coefficients()
        self.scale = self.domain[1] - self.domain[0]
        self._laps = self._compute_laps()

    def __reduce__(self) -> Tuple[Any, ...]:
        return (MapSpec, (self.definition,))

    def __repr__(self) -> str:
        return f"MapSpec(name={self.name!r}, domain={self.domain})"

    # Construction helpers

    def _build_piecewise(self, pieces: List[PieceSpec]) -> sp.Expr:
        ordered = sorted(pieces, key=lambda p: p.lower)
        lo, hi = self.domain
        tol = 1e-12 * max(1.0, abs(hi - lo))
        if abs(ordered[0].lower - lo) > tol or abs(ordered[-1].upper - hi) > tol:
            raise MapDefinitionError("pieces must cover the domain", domain=[lo, hi])
        exprs = [parse_expression(p.expression) for p in ordered]
        for left, right, e_left, e_right in zip(ordered, ordered[1:], exprs, exprs[1:]):
            if abs(left.upper - right.lower) > tol:
                raise MapDefinitionError(
                    "pieces must be contiguous", gap=[left.upper, right.lower]
                )
            knot = left.upper
            if any(abs(knot - k) <= tol for k in self.kinks):
                continue
            for order in range(4):
                a = float(sp.N(sp.diff(e_left, X, order).subs(X, knot)))
                b = float(sp.N(sp.diff(e_right, X, order).subs(X, knot)))
                if abs(a - b) > C3_TOLERANCE * max(1.0, abs(a), abs(b)):
                    raise MapDefinitionError(
                        "pieces are not C3-compatible at knot",
                        knot=knot,
                        derivative_order=order,
                        left=a,
                        right=b,
                    )
        branches = [(e, X <= p.upper) for p, e in zip(ordered[:-1], exprs[:-1])]
        branches.append((exprs[-1], True))
        return sp.Piecewise(*branches)

    def _polynomial_coefficients(self) -> Optional[np.ndarray]:
        if self.expression.has(sp.Piecewise):
            return None
        try:
            poly = sp.Poly(self.expression, X)
        except sp.PolynomialError:
            return None
        return np.array([complex(c) for c in poly.all_coeffs()], dtype=complex)

    def _compute_laps(self) -> List[Lap]:
        lo, hi = self.domain
        tol = 1e-12 * self.scale
        cuts = [lo]
        for t in self.turning_points:
            if lo + tol < t < hi - tol:
                cuts.append(t)
        cuts.append(hi)
        laps = []
        for a, b in zip(cuts, cuts[1:]):
            mid = 0.5 * (a + b)
            slope = self._scalar(1)(mid)
            if slope == 0:
                slope = float(self._scalar(0)(b)) - float(self._scalar(0)(a))
            laps.append(Lap(a, b, slope > 0))
        return laps

    # Compiled functions

    def derivative_expression(self, k: int) -> sp.Expr:
        while len(self._derivatives) <= k:
            self._derivatives.append(sp.diff(self._derivatives[-1], X))
        return self._derivatives[k]

    def _compiled_fn(self, k: int, backend: str) -> Callable[..., Any]:
        key = (k, backend)
        if key not in self._compiled:
            self._compiled[key] = sp.lambdify(X, self.derivative_expression(k), modules=backend)
        return self._compiled[key]

    def _scalar(self, k: int) -> Callable[[float], float]:
        fn = self._compiled_fn(k, "math")
        return lambda x: float(fn(x))

    def _dispatch(self, k: int, x: Real) -> Real:
        if isinstance(x, mpmath.mpf):
            return mpmath.mpf(self._compiled_fn(k, "mpmath")(x))
        return float(self._compiled_fn(k, "math")(x))

    # Evaluation

    @property
    def turning_points(self) -> List[float]:
        """Even-order critical points and declared kinks, sorted"""
        points = [c.location for c in self.critical_points if c.is_even]
        return sorted(points + self.kinks)

    @property
    def laps(self) -> List[Lap]:
        return list(self._laps)

    @property
    def is_polynomial(self) -> bool:
        return self._coefficients is not None

    @property
    def polynomial_coefficients(self) -> Optional[np.ndarray]:
        """Complex coefficients, highest degree first; None for non-polynomial maps"""
        return None if self._coefficients is None else self._coefficients.copy()

    def check_domain(self, x: Real) -> None:
        if self.is_circle:
            return
        lo, hi = self.domain
        tol = 16.0 * np.finfo(float).eps * self.scale
        value = float(x)
        if not (lo - tol <= value <= hi + tol) or math.isnan(value):
            raise DomainError("point outside the domain of the map", x=value, domain=[lo, hi])

    def evaluate(self, x: Real, derivative_order: int = 0, precision: Optional[Precision] = None) -> Real:
        """
        Value of f or of its k-th derivative.

        Args:
            x: Point of the domain
            derivative_order: k >= 0; orders up to 3 are exact, higher are best effort
            precision: Working precision; mpf arguments are always evaluated extended

        Returns:
            f(x) or D^k f(x)
        """
        if derivative_order < 0:
            raise ValueError("derivative_order must be >= 0")
        self.check_domain(x)
        if precision is not None and precision.extended and not isinstance(x, mpmath.mpf):
            with precision.activate():
                return self._dispatch(derivative_order, mpmath.mpf(x))
        return self._dispatch(derivative_order, x)

    def __call__(self, x: Real) -> Real:
        return self._dispatch(0, x)

    def derivative(self, x: Real, k: int = 1) -> Real:
        return self._dispatch(k, x)

    def array(self, xs: np.ndarray, k: int = 0) -> np.ndarray:
        """Vectorised evaluation at binary64"""
        xs = np.asarray(xs, dtype=float)
        values = self._compiled_fn(k, "numpy")(xs)
        return np.asarray(values, dtype=float) + np.zeros_like(xs)

    def iterate(self, x: Real, n: int) -> Real:
        for _ in range(n):
            x = self._dispatch(0, x)
        return x

    def iterate_array(self, xs: np.ndarray, n: int) -> np.ndarray:
        values = np.asarray(xs, dtype=float)
        fn = self._compiled_fn(0, "numpy")
        for _ in range(n):
            values = np.asarray(fn(values), dtype=float) + np.zeros_like(values)
        return values

    def orbit(self, x: Real, n: int) -> List[Real]:
        """x, f(x), ..., f^n(x); circle orbits are reduced mod 1"""
        points = [x]
        for _ in range(n):
            x = self._dispatch(0, x)
            points.append(x)
        if self.is_circle:
            return [p % 1 for p in points]
        return points

    def iterate_derivative(self, x: Real, n: int) -> Real:
        """D(f^n)(x) by the chain rule"""
        total: Real = 1.0 if not isinstance(x, mpmath.mpf) else mpmath.mpf(1)
        for _ in range(n):
            total = total * self._dispatch(1, x)
            x = self._dispatch(0, x)
        return total

    def schwarzian(self, x: Real) -> Real:
        d1 = self._dispatch(1, x)
        d2 = self._dispatch(2, x)
        d3 = self._dispatch(3, x)
        return d3 / d1 - 1.5 * (d2 / d1) ** 2

    def complex_value(self, z: Union[complex, np.ndarray]) -> Union[complex, np.ndarray]:
        if self._coefficients is None:
            raise MapDefinitionError("complex evaluation needs a polynomial map", name=self.name)
        return np.polyval(self._coefficients, z)

    def complex_derivative(self, z: Union[complex, np.ndarray]) -> Union[complex, np.ndarray]:
        if self._coefficients is None:
            raise MapDefinitionError("complex evaluation needs a polynomial map", name=self.name)
        return np.polyval(np.polyder(self._coefficients), z)

    # Branches

    def lap_index(self, x: float) -> int:
        """Index of the lap containing x; turning points belong to the left lap"""
        for i, lap in enumerate(self._laps):
            if x <= lap.hi:
                return i
        return len(self._laps) - 1

    def lap_image(self, i: int) -> Tuple[float, float]:
        lap = self._laps[i]
        ya, yb = self._scalar(0)(lap.lo), self._scalar(0)(lap.hi)
        return (min(ya, yb), max(ya, yb))

    def lap_preimage(self, i: int, y: Real, precision: Optional[Precision] = None) -> Optional[Real]:
        """The solution of f(x) = y on lap i, or None when y is outside the lap image"""
        lap = self._laps[i]
        prec = resolve_precision(precision)
        lo: Real = prec.real(lap.lo)
        hi: Real = prec.real(lap.hi)
        y_lo, y_hi = self(lo), self(hi)
        low, high = (y_lo, y_hi) if y_lo <= y_hi else (y_hi, y_lo)
        if y < low or y > high:
            return None
        return bracketed_root(lambda t: self(t) - y, lo, hi, prec)

    def preimages(self, y: Real, precision: Optional[Precision] = None) -> List[Tuple[int, Real]]:
        result = []
        for i in range(len(self._laps)):
            root = self.lap_preimage(i, y, precision)
            if root is not None:
                result.append((i, root))
        return result

    def lap_preimage_array(self, i: int, ys: np.ndarray, steps: int = 64) -> np.ndarray:
        """Vectorised preimages on lap i; NaN where y is outside the lap image"""
        ys = np.asarray(ys, dtype=float)
        lap = self._laps[i]
        y_lo, y_hi = self.lap_image(i)
        inside = (ys >= y_lo) & (ys <= y_hi)
        out = np.full(ys.shape, np.nan)
        if not inside.any():
            return out
        targets = ys[inside]
        lo = np.full(targets.shape, lap.lo)
        hi = np.full(targets.shape, lap.hi)
        out[inside] = vectorized_bisect(lambda m: self.array(m) - targets, lo, hi, steps)
        return out

    def critical_exact(self, index: int) -> sp.Expr:
        return self._critical_exact[index]

    def critical_values(self) -> List[float]:
        return [self._scalar(0)(c.location) for c in self.critical_points]

    def reflected(self) -> "MapSpec":
        """Conjugate by x -> -x: g(x) = -f(-x) on (-b, -a)"""
        return MapSpec(reflect_definition(self.definition))


def reflect_definition(definition: MapDefinition) -> MapDefinition:
    if definition.domain == DomainKind.CIRCLE:
        raise MapDefinitionError("circle lifts are not reflected", name=definition.name)
    lo, hi = definition.domain  # type: ignore[misc]

    def flip(text: str) -> str:
        return sp.sstr(sp.expand(-parse_expression(text).subs(X, -X)))

    pieces = None
    if definition.pieces is not None:
        pieces = [
            PieceSpec(lower=-p.upper, upper=-p.lower, expression=flip(p.expression))
            for p in reversed(definition.pieces)
        ]
    critical = [
        {"x": -s.x if isinstance(s.x, float) else f"-({s.x})", "order": s.order}
        for s in definition.critical_points
    ]
    parabolic = [
        {
            "point": -p.point if isinstance(p.point, float) else f"-({p.point})",
            "period": p.period,
            "multiplicity": p.multiplicity,
        }
        for p in definition.parabolic
    ]
    return MapDefinition(
        name=f"{definition.name}-reflected",
        domain=(-hi, -lo),
        expression=flip(definition.expression) if definition.expression else None,
        pieces=pieces,
        critical_points=critical,
        parabolic=parabolic,
        kinks=[-k for k in definition.kinks],
    )


def load_map_definition(definition: MapDefinition, verify: bool = True) -> MapSpec:
    """Compile a definition; declared critical orders are checked once here"""
    spec = MapSpec(definition)
    if verify:
        for point in spec.critical_points:
            report = verify_local_form(spec, point)
            if not report.passed:
                raise FormMismatch(
                    "declared critical order does not match the local form",
                    location=point.location,
                    declared=point.order,
                    estimate=report.order_estimate,
                )
    logger.debug("map_loaded", name=spec.name, laps=len(spec.laps), polynomial=spec.is_polynomial)
    return spec


def load_map(path: Union[str, Path], verify: bool = True) -> MapSpec:
    """Load a JSON map definition file"""
    try:
        raw = json.loads(Path(path).read_text())
        definition = MapDefinition.model_validate(raw)
    except (OSError, json.JSONDecodeError) as exc:
        raise MapDefinitionError(f"cannot read map definition: {exc}", path=str(path)) from exc
    except ValidationError as exc:
        raise MapDefinitionError(f"invalid map definition: {exc}", path=str(path)) from exc
    return load_map_definition(definition, verify=verify)


def evaluate(
    spec: MapSpec, x: Real, derivative_order: int = 0, precision: Optional[Precision] = None
) -> Real:
    return spec.evaluate(x, derivative_order, precision)


def verify_local_form(
    spec: MapSpec, point: CriticalPoint, k_range: Tuple[int, int] = (10, 40)
) -> LocalFormReport:
    """
    Log-log slope of |f(x) - f(c)| over x = c +- 2^-k.

    The samples are evaluated in mpmath with enough bits that |x - c|^d stays far
    above roundoff. Derivatives below the declared order must vanish at c.

    Raises:
        FormMismatch: the slope does not settle, or f is flat at c
    """
    index = spec.critical_points.index(point)
    exact = spec.critical_exact(index)
    d = point.order
    bits = max(64, (k_range[1] + 2) * d + 96)
    ks = np.arange(k_range[0], k_range[1] + 1)

    with mpmath.workprec(bits):
        c = mpmath.mpf(sp.N(exact, int(bits * 0.31) + 5))
        f_c = spec(c)
        logs_h: List[float] = []
        logs_v: List[float] = []
        for k in ks:
            h = mpmath.ldexp(1, -int(k))
            for side in (h, -h):
                if not spec.is_circle and not (spec.domain[0] <= float(c + side) <= spec.domain[1]):
                    continue
                value = abs(spec(c + side) - f_c)
                if value == 0:
                    raise FormMismatch("map is flat at the critical point", location=point.location)
                logs_h.append(float(mpmath.log(h)))
                logs_v.append(float(mpmath.log(value)))
        derivatives_vanish = True
        if d <= 6:
            for order in range(1, d):
                value = abs(spec.derivative(c, order))
                if value > mpmath.mpf(2) ** (-bits // 2):
                    derivatives_vanish = False

    if len(logs_h) < 4:
        raise FormMismatch("too few samples inside the domain", location=point.location)
    xs, ys = np.array(logs_h), np.array(logs_v)
    fit = stats.linregress(xs, ys)
    half = len(xs) // 2
    first = stats.linregress(xs[:half], ys[:half]).slope
    second = stats.linregress(xs[half:], ys[half:]).slope
    if abs(first - second) > 0.1:
        raise FormMismatch(
            "log-log slope does not converge",
            location=point.location,
            early_slope=float(first),
            late_slope=float(second),
        )
    residual = float(np.max(np.abs(ys - (fit.intercept + fit.slope * xs))))
    estimate = float(fit.slope)
    return LocalFormReport(
        location=point.location,
        declared_order=d,
        order_estimate=estimate,
        residual=residual,
        passed=abs(estimate - d) < LOCAL_FORM_TOLERANCE and derivatives_vanish,
        samples=len(xs),
    )


def check_derivative_consistency(
    spec: MapSpec, samples: int = 64, seed: int = 0
) -> DerivativeConsistencyReport:
    """Central differences against the exact derivative; the error must fall like h^2"""
    rng = np.random.default_rng(seed)
    lo, hi = spec.domain
    margin = 0.05 * spec.scale
    xs = rng.uniform(lo + margin, hi - margin, samples)
    for kink in spec.kinks:
        xs = xs[np.abs(xs - kink) > margin]
    hs = 2.0 ** -np.arange(4, 13)
    exact = spec.array(xs, 1)
    errors = []
    for h in hs:
        approx = (spec.array(xs + h) - spec.array(xs - h)) / (2 * h)
        errors.append(float(np.max(np.abs(approx - exact))))
    errors_arr = np.array(errors)
    floor = 1e3 * np.finfo(float).eps * max(1.0, float(np.max(np.abs(exact))))
    if np.all(errors_arr <= floor):
        # central differences are exact up to roundoff for quadratics
        return DerivativeConsistencyReport(fitted_exponent=None, passed=True, samples=len(xs))
    usable = errors_arr > floor
    fit = stats.linregress(np.log(hs[usable]), np.log(errors_arr[usable]))
    return DerivativeConsistencyReport(
        fitted_exponent=float(fit.slope), passed=bool(fit.slope >= 1.9), samples=len(xs)
    )


def _sign_certificate(
    spec: MapSpec, a: float, b: float, expected: int, samples: int, lap: int, split: bool
) -> BranchCertificate:
    width = b - a
    xs = np.linspace(a + 1e-9 * width, b - 1e-9 * width, samples)
    signs = np.sign(spec.array(xs, 1))
    nonzero = signs[signs != 0]
    certified = bool(nonzero.size > 0 and np.all(nonzero == expected))
    return BranchCertificate(
        interval=create_interval(a, b), sign=expected, certified=certified, lap=lap, split=split
    )


def certify_monotone_branches(
    spec: MapSpec, samples: int = 1000, precision: Optional[Precision] = None
) -> List[BranchCertificate]:
    """
    Sign of Df on every lap, sampled densely.

    A sign change between two samples is refined to a root of Df by bracketing,
    the lap is split there and each sub-branch is certified on its own samples
    with alternating signs.
    """
    prec = resolve_precision(precision)
    certificates = []
    for index, lap in enumerate(spec.laps):
        width = lap.hi - lap.lo
        xs = np.linspace(lap.lo + 1e-9 * width, lap.hi - 1e-9 * width, samples)
        signs = np.sign(spec.array(xs, 1))
        live = np.flatnonzero(signs)
        flips = [(i, j) for i, j in zip(live, live[1:]) if signs[i] != signs[j]]
        if not flips:
            certificate = _sign_certificate(
                spec, lap.lo, lap.hi, 1 if lap.increasing else -1, samples, index, False
            )
            if not certificate.certified:
                logger.warning("branch_not_monotone", lo=lap.lo, hi=lap.hi)
            certificates.append(certificate)
            continue
        cuts = [lap.lo]
        for i, j in flips:
            turning = float(bracketed_root(spec.derivative, float(xs[i]), float(xs[j]), prec))
            logger.warning("undeclared_turning_point", lap=index, location=turning)
            cuts.append(turning)
        cuts.append(lap.hi)
        sign = int(signs[live[0]])
        for a, b in zip(cuts, cuts[1:]):
            certificates.append(_sign_certificate(spec, a, b, sign, samples, index, True))
            sign = -sign
    return certificates


def rotation_number(spec: MapSpec, x0: float = 0.0, n: int = 10_000) -> float:
    """(F^n(x0) - x0) / n for a degree-one circle lift"""
    if not spec.is_circle or spec.degree != 1:
        raise DomainError("rotation number needs a degree-one circle lift", name=spec.name)
    return float((spec.iterate(float(x0), n) - x0) / n)
