"""
Periodic orbits, multiplier classification, parabolic data, immediate basins and
finite-horizon recurrence between critical points.
"""

import csv
import io
import math
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import structlog
from scipy import stats

from .decorators import count_items, track_analysis
from .errors import (
    BranchEscape,
    DomainError,
    MultiplicityUndetermined,
    NotParabolic,
    RootNotBracketed,
)
from .maps import MapSpec
from .precision import Precision, Real, bracketed_root, resolve_precision
from .schemas import (
    Chain,
    EscapeRateFit,
    OrbitClass,
    OrderEdge,
    PartialOrderReport,
    PeriodicOrbit,
    RenormalizationWitness,
    create_interval,
)

logger = structlog.get_logger(__name__)

PARABOLIC_TOLERANCE = 1e-8
BORDERLINE_TOLERANCE = 1e-6
MAX_MULTIPLICITY_ORDER = 4


def classify_multiplier(multiplier: float, precision: Optional[Precision] = None) -> OrbitClass:
    prec = resolve_precision(precision)
    size = abs(multiplier)
    tol = prec.scaled(PARABOLIC_TOLERANCE)
    if size < tol:
        return OrbitClass.SUPERATTRACTING
    if abs(size - 1.0) < tol:
        return OrbitClass.PARABOLIC
    if size < 1.0:
        return OrbitClass.ATTRACTING
    return OrbitClass.REPELLING


def _require_interval(spec: MapSpec) -> None:
    if spec.is_circle:
        raise DomainError("operation needs an interval map", name=spec.name)


def _grid_values(spec: MapSpec, xs: np.ndarray, p: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """f^p(x) - x, D(f^p)(x) - 1 and a mask of orbits that stay in the domain"""
    lo, hi = spec.domain
    tol = 1e-9 * spec.scale
    values = xs.copy()
    slope = np.ones_like(xs)
    inside = np.ones(xs.shape, dtype=bool)
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(p):
            slope = slope * spec.array(values, 1)
            values = spec.array(values)
            inside &= (values >= lo - tol) & (values <= hi + tol)
            values = np.where(inside, values, 0.5 * (lo + hi))
    return values - xs, slope - 1.0, inside


def _minimal_period(spec: MapSpec, x: Real, p: int, tol: float) -> int:
    for m in range(1, p + 1):
        if p % m == 0 and abs(float(spec.iterate(x, m)) - float(x)) <= tol:
            return m
    return p


def _orbit_multiplier(spec: MapSpec, x: Real, period: int) -> Real:
    return spec.iterate_derivative(x, period)


@track_analysis(extract_context=count_items)
def find_periodic_orbits(
    spec: MapSpec,
    period_max: int = 4,
    grid_density: int = 4000,
    precision: Optional[Precision] = None,
) -> List[PeriodicOrbit]:
    """
    Periodic orbits up to period_max from sign changes of f^p(x) - x.

    Tangential roots (parabolic orbits without a sign change) are caught where
    D(f^p) - 1 changes sign and |f^p(x) - x| is negligible. Orbits are merged by
    minimal period; orbits between grid points may be missed.

    Args:
        spec: Interval map
        period_max: Largest period searched
        grid_density: Grid points per unit of period
        precision: Root refinement precision

    Returns:
        Orbits sorted by period, then by their least point
    """
    if period_max < 1:
        raise ValueError("period_max must be >= 1")
    _require_interval(spec)
    prec = resolve_precision(precision)
    lo, hi = spec.domain
    root_tol = prec.endpoint_tolerance(spec.scale)
    same_tol = max(prec.scaled(1e-9) * spec.scale, 64 * root_tol)
    tangency_tol = prec.scaled(1e-12) * spec.scale
    found: Dict[int, List[Real]] = {}
    orbits: List[PeriodicOrbit] = []

    with prec.activate():
        for p in range(1, period_max + 1):
            xs = np.linspace(lo, hi, grid_density * p + 1)
            g, dg, inside = _grid_values(spec, xs, p)

            def displacement(t: Real, p: int = p) -> Real:
                return spec.iterate(t, p) - t

            def slope_excess(t: Real, p: int = p) -> Real:
                return spec.iterate_derivative(t, p) - 1

            roots: List[Real] = []
            for i in np.nonzero(inside & (np.abs(g) <= root_tol))[0]:
                roots.append(prec.real(xs[i]))
            both = inside[:-1] & inside[1:]
            crossings = np.nonzero(both & (np.sign(g[:-1]) * np.sign(g[1:]) < 0))[0]
            for i in crossings:
                try:
                    roots.append(bracketed_root(displacement, prec.real(xs[i]), prec.real(xs[i + 1]), prec))
                except RootNotBracketed:
                    continue
            turns = np.nonzero(both & (np.sign(dg[:-1]) * np.sign(dg[1:]) < 0))[0]
            for i in turns:
                if min(abs(g[i]), abs(g[i + 1])) > 1e-3 * spec.scale:
                    continue
                try:
                    t = bracketed_root(slope_excess, prec.real(xs[i]), prec.real(xs[i + 1]), prec)
                except RootNotBracketed:
                    continue
                if abs(float(displacement(t))) <= tangency_tol:
                    roots.append(t)

            for x in roots:
                m = _minimal_period(spec, x, p, same_tol)
                points = [x]
                for _ in range(m - 1):
                    points.append(spec(points[-1]))
                canonical = min(points, key=float)
                known = found.setdefault(m, [])
                if any(abs(float(canonical) - float(k)) <= same_tol for k in known):
                    continue
                known.append(canonical)
                orbits.append(_make_orbit(spec, points, m, prec))

    orbits.sort(key=lambda o: (o.period, o.points[0]))
    logger.info(
        "periodic_orbits_found",
        name=spec.name,
        period_max=period_max,
        count=len(orbits),
        classes=[o.orbit_class.value for o in orbits],
    )
    return orbits


def _make_orbit(spec: MapSpec, points: List[Real], period: int, prec: Precision) -> PeriodicOrbit:
    start = min(range(len(points)), key=lambda i: float(points[i]))
    cyclic = points[start:] + points[:start]
    multiplier = float(_orbit_multiplier(spec, cyclic[0], period))
    orbit_class = classify_multiplier(multiplier, prec)
    orbit = PeriodicOrbit(
        points=[float(p) for p in cyclic],
        period=period,
        multiplier=multiplier,
        orbit_class=orbit_class,
        borderline=abs(abs(multiplier) - 1.0) < BORDERLINE_TOLERANCE,
    )
    if orbit_class == OrbitClass.PARABOLIC:
        try:
            d, sign = _multiplicity_at(spec, cyclic[0], period, prec)
        except MultiplicityUndetermined:
            logger.warning("parabolic_multiplicity_undetermined", point=float(cyclic[0]))
            return orbit
        orbit = orbit.model_copy(update={"parabolic_multiplicity": d, "parabolic_sign": sign})
    return orbit


def orbit_table_csv(orbits: Sequence[PeriodicOrbit]) -> str:
    """period, point, multiplier, class; one row per orbit point"""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["period", "point", "multiplier", "class"])
    for orbit in orbits:
        for point in orbit.points:
            writer.writerow([orbit.period, repr(point), repr(orbit.multiplier), orbit.orbit_class.value])
    return buffer.getvalue()


# Parabolic data


def _taylor_coefficients(spec: MapSpec, x: Real, order: int) -> List[Real]:
    coefficients = [spec(x)]
    for k in range(1, order + 1):
        coefficients.append(spec.derivative(x, k) / math.factorial(k))
    return coefficients


def _series_mul(a: List[Real], b: List[Real], order: int) -> List[Real]:
    out: List[Real] = [0 * a[0]] * (order + 1)
    for i, ai in enumerate(a):
        if ai == 0:
            continue
        for j in range(0, order + 1 - i):
            out[i + j] = out[i + j] + ai * b[j]
    return out


def composed_series(spec: MapSpec, x: Real, period: int, order: int) -> List[Real]:
    """Coefficients a_1..a_order of f^period(x + h) - f^period(x) in powers of h"""
    zero = x - x
    series: List[Real] = [zero, zero + 1] + [zero] * (order - 1)
    point = x
    for _ in range(period):
        taylor = _taylor_coefficients(spec, point, order)
        result: List[Real] = [zero] * (order + 1)
        power: List[Real] = [zero + 1] + [zero] * order
        for k in range(1, order + 1):
            power = _series_mul(power, series, order)
            for i in range(order + 1):
                result[i] = result[i] + taylor[k] * power[i]
        series = result
        point = taylor[0]
    return series


def _multiplicity_at(spec: MapSpec, x: Real, period: int, prec: Precision) -> Tuple[int, int]:
    series = composed_series(spec, x, period, MAX_MULTIPLICITY_ORDER)
    tol = prec.scaled(PARABOLIC_TOLERANCE) * 100
    for k in range(2, MAX_MULTIPLICITY_ORDER + 1):
        # a_k = D^k f^n(p) / k!
        if abs(float(series[k])) > tol:
            return k - 1, 1 if series[k] > 0 else -1
    raise MultiplicityUndetermined(
        "all derivatives of the iterate up to order 4 vanish", point=float(x), period=period
    )


def parabolic_multiplicity(
    spec: MapSpec, orbit: PeriodicOrbit, precision: Optional[Precision] = None
) -> Tuple[int, int]:
    """
    Parabolic multiplicity d and the sign of the leading coefficient a in
    f^n(x) = p + lambda (x - p) + a (x - p)^(d+1) + ...

    Raises:
        NotParabolic: the orbit is not parabolic
        MultiplicityUndetermined: every derivative up to order 4 vanishes
    """
    if orbit.orbit_class != OrbitClass.PARABOLIC:
        raise NotParabolic("orbit is not parabolic", multiplier=orbit.multiplier)
    prec = resolve_precision(precision)
    with prec.activate():
        return _multiplicity_at(spec, prec.real(orbit.points[0]), orbit.period, prec)


def parabolic_escape_rate(
    spec: MapSpec,
    p: float,
    x0: float,
    n: int = 10_000,
    period: int = 1,
    precision: Optional[Precision] = None,
) -> EscapeRateFit:
    """
    Backward orbit of x0 towards the parabolic point p under the local inverse.

    The distances |x_k - p| decay like k^(-1/d) and the fundamental domains
    (x_(k+1), x_k) like k^(-(d+1)/d); both exponents are fitted on the last half.

    Raises:
        NotParabolic: the multiplier at p is not +1 or -1
        BranchEscape: x0 is on the attracting side or the inverse leaves the branch
    """
    prec = resolve_precision(precision)
    if n < 8:
        raise ValueError("need at least 8 backward steps for a fit")
    multiplier = float(spec.iterate_derivative(float(p), period))
    if abs(abs(multiplier) - 1.0) > BORDERLINE_TOLERANCE:
        raise NotParabolic(
            "escape rate needs a parabolic point", point=float(p), multiplier=multiplier
        )
    step = period if multiplier > 0 else 2 * period
    d, _ = _multiplicity_at(spec, float(p), step, prec)

    if period == 1:
        lap = spec.laps[spec.lap_index(float(p))]
        if not (lap.lo <= x0 <= lap.hi):
            raise BranchEscape("x0 is outside the monotone branch of p", x0=x0, point=p)

    def g(t: Real) -> Real:
        return spec.iterate(t, step)

    if abs(float(g(x0)) - p) <= abs(x0 - p):
        raise BranchEscape("x0 is not on the repelling side of p", x0=x0, point=p)

    with prec.activate():
        p_r = prec.real(p)
        xs: List[Real] = [prec.real(x0)]
        for k in range(n):
            target = xs[-1]
            try:
                xs.append(bracketed_root(lambda t, y=target: g(t) - y, p_r, target, prec))
            except RootNotBracketed as exc:
                raise BranchEscape(
                    "inverse branch left the monotone branch", step=k, x=float(target)
                ) from exc

    distances = np.array([abs(float(x - p_r)) for x in xs])
    domains = np.abs(np.diff(np.array([float(x) for x in xs])))
    ks = np.arange(1, len(distances))
    tail = ks >= len(distances) // 2
    orbit_fit = stats.linregress(np.log(ks[tail]), np.log(distances[1:][tail]))
    domain_ks = np.arange(1, len(domains) + 1)
    domain_tail = domain_ks >= len(domains) // 2
    domain_fit = stats.linregress(np.log(domain_ks[domain_tail]), np.log(domains[domain_tail]))
    logger.info(
        "escape_rate_fitted",
        point=p,
        d=d,
        exponent=float(orbit_fit.slope),
        domain_exponent=float(domain_fit.slope),
    )
    return EscapeRateFit(
        point=float(p),
        sequence=distances.tolist(),
        fitted_exponent=float(orbit_fit.slope),
        r_squared=float(orbit_fit.rvalue**2),
        domain_exponent=float(domain_fit.slope),
        domain_r_squared=float(domain_fit.rvalue**2),
        fundamental_domains=domains.tolist(),
        degree_estimate=d,
    )


def fundamental_domain_chain(fit: EscapeRateFit) -> Chain:
    """Fundamental domains of a backward parabolic orbit as a diffeomorphic chain"""
    distances = fit.sequence
    pieces = []
    for near, far in zip(reversed(distances[1:]), reversed(distances[:-1])):
        pieces.append(create_interval(fit.point + near, fit.point + far))
    return Chain(pieces=pieces, critical_steps=[False] * len(pieces), order=0)


# Basins


def _converges(
    g: Callable[[float], float],
    x: float,
    target: float,
    others: Sequence[float],
    domain: Tuple[float, float],
    steps: int,
    radius: float,
    parabolic: bool,
) -> bool:
    """Orbit of x under g settles at target; stops early near any cycle point"""
    lo, hi = domain
    slack = 1e-9 * (hi - lo)
    previous = abs(x - target)
    approaching = 0
    for _ in range(steps):
        x = g(x)
        if not (lo - slack <= x <= hi + slack) or math.isnan(x):
            return False
        distance = abs(x - target)
        if not parabolic:
            if distance < radius:
                return True
            if any(abs(x - o) < radius for o in others):
                return False
        else:
            approaching = approaching + 1 if distance < previous else 0
            if distance < radius and approaching >= 3:
                return True
        previous = distance
    return abs(x - target) < radius


def immediate_basin(
    spec: MapSpec,
    orbit: PeriodicOrbit,
    steps: int = 4000,
    samples: int = 512,
    precision: Optional[Precision] = None,
) -> List[Tuple[float, float]]:
    """
    Immediate basin components B_0(q) for every point q of an attracting or
    parabolic orbit.

    Boundaries are bracketed by a convergence predicate and then snapped: to a
    periodic point of f^n, to the domain boundary, or to a solution of
    f^n(x) = the opposite boundary of the same component.
    """
    if orbit.orbit_class == OrbitClass.REPELLING:
        raise ValueError("repelling orbits have no basin")
    prec = resolve_precision(precision)
    period = orbit.period if orbit.multiplier >= 0 else 2 * orbit.period
    lo, hi = spec.domain
    parabolic = orbit.orbit_class == OrbitClass.PARABOLIC
    radius = (0.05 if parabolic else 1e-3) * spec.scale

    def g(t: float) -> float:
        return float(spec.iterate(t, period))

    components = []
    for q in orbit.points:
        others = [o for o in orbit.points if o != q]

        def settles(t: float, q: float = q, others: List[float] = others) -> bool:
            return _converges(g, t, q, others, spec.domain, steps, radius, parabolic)

        ends = []
        for edge in (lo, hi):
            ts = np.linspace(q, edge, samples + 1)[1:]
            if abs(edge - q) <= 1e-12 * spec.scale:
                ends.append(edge)
                continue
            if parabolic and not settles(float(ts[0])):
                # repelling side of a parabolic point
                ends.append(q)
                continue
            last_in = q
            boundary = edge
            for t in ts:
                if not settles(float(t)):
                    a, b = last_in, float(t)
                    for _ in range(60):
                        m = 0.5 * (a + b)
                        if settles(m):
                            a = m
                        else:
                            b = m
                    boundary = 0.5 * (a + b)
                    break
                last_in = float(t)
            ends.append(boundary)
        components.append(_snap_component(spec, period, q, ends[0], ends[1], prec))
    logger.debug("immediate_basin", period=period, components=components)
    return components


def _snap_component(
    spec: MapSpec, period: int, q: float, left: float, right: float, prec: Precision
) -> Tuple[float, float]:
    lo, hi = spec.domain
    window = 1e-6 * spec.scale

    def fixed(t: Real) -> Real:
        return spec.iterate(t, period) - t

    def snap_fixed(e: float) -> Optional[float]:
        if abs(e - lo) <= window:
            return lo
        if abs(e - hi) <= window:
            return hi
        a, b = max(lo, e - window), min(hi, e + window)
        try:
            return float(bracketed_root(fixed, a, b, prec))
        except RootNotBracketed:
            return None

    snapped_left = snap_fixed(left)
    snapped_right = snap_fixed(right)
    if snapped_left is None and snapped_right is not None:
        snapped_left = _solve_near(spec, period, left, snapped_right, window, prec)
    if snapped_right is None and snapped_left is not None:
        snapped_right = _solve_near(spec, period, right, snapped_left, window, prec)
    return (
        snapped_left if snapped_left is not None else left,
        snapped_right if snapped_right is not None else right,
    )


def _solve_near(
    spec: MapSpec, period: int, e: float, target: float, window: float, prec: Precision
) -> Optional[float]:
    lo, hi = spec.domain
    a, b = max(lo, e - window), min(hi, e + window)
    try:
        return float(bracketed_root(lambda t: spec.iterate(t, period) - target, a, b, prec))
    except RootNotBracketed:
        return None


def in_basin(
    spec: MapSpec, x: float, orbits: Sequence[PeriodicOrbit], horizon: int = 10_000, tol: float = 1e-6
) -> Optional[PeriodicOrbit]:
    """The attracting or parabolic orbit whose neighbourhood the orbit of x settles in"""
    candidates = [o for o in orbits if o.is_attracting or o.orbit_class == OrbitClass.PARABOLIC]
    if not candidates:
        return None
    y = float(x)
    for _ in range(horizon):
        y = float(spec(y))
    tail = [y]
    for _ in range(max(o.period for o in candidates) * 2):
        y = float(spec(y))
        tail.append(y)
    for orbit in candidates:
        distance = min(abs(t - p) for t in tail for p in orbit.points)
        scale_tol = tol * spec.scale
        if orbit.orbit_class == OrbitClass.PARABOLIC:
            scale_tol = max(scale_tol, 100.0 * spec.scale / horizon)
        if distance < scale_tol:
            return orbit
    return None


# Renormalization


def _sampled_image(spec: MapSpec, a: float, b: float, steps: int, samples: int) -> List[Tuple[float, float]]:
    """Hulls of f^j([a, b]) for j = 0..steps from a dense sample"""
    xs = np.linspace(a, b, samples)
    extra = [c.location for c in spec.critical_points if a < c.location < b]
    xs = np.concatenate([xs, np.array(extra)]) if extra else xs
    hulls = [(a, b)]
    values = xs
    for _ in range(steps):
        values = spec.array(values)
        hulls.append((float(np.min(values)), float(np.max(values))))
    return hulls


def periodic_interval_check(
    spec: MapSpec, a: float, b: float, s: int, samples: int = 257
) -> Tuple[bool, bool, float]:
    """(disjoint interiors of K..f^(s-1)K, f^s(K) inside K, boundary residual)"""
    hulls = _sampled_image(spec, a, b, s, samples)
    tol = 1e-9 * spec.scale
    images = hulls[:s]
    disjoint = True
    for i in range(s):
        for j in range(i + 1, s):
            (a1, b1), (a2, b2) = images[i], images[j]
            if min(b1, b2) - max(a1, a2) > tol:
                disjoint = False
    end_a, end_b = hulls[s]
    inside = end_a >= a - tol and end_b <= b + tol
    fa, fb = float(spec.iterate(a, s)), float(spec.iterate(b, s))
    residual = max(min(abs(fa - a), abs(fa - b)), min(abs(fb - a), abs(fb - b)))
    return disjoint, inside, residual


def renormalization_intervals(
    spec: MapSpec,
    critical_index: int,
    orbits: Sequence[PeriodicOrbit],
    samples: int = 257,
) -> List[RenormalizationWitness]:
    """
    Periodic intervals around an even critical point built from repelling orbits.

    For the orbit point p nearest c the interval K has endpoints p and the other
    preimage of f(p) across c; periods q and 2q are tested.
    """
    critical = spec.critical_points[critical_index]
    c = critical.location
    laps = spec.laps
    left_lap = spec.lap_index(c)
    right_lap = min(left_lap + 1, len(laps) - 1)
    witnesses: Dict[int, RenormalizationWitness] = {}
    for orbit in orbits:
        if orbit.orbit_class != OrbitClass.REPELLING:
            continue
        p = min(orbit.points, key=lambda t: abs(t - c))
        other = right_lap if p < c else left_lap
        if other == spec.lap_index(p) and abs(p - c) > 0:
            continue
        p_hat = spec.lap_preimage(other, spec(p))
        if p_hat is None:
            continue
        a, b = sorted((float(p), float(p_hat)))
        if not a < c < b:
            continue
        for s in sorted({orbit.period, 2 * orbit.period}):
            if s < 2 or s in witnesses:
                continue
            disjoint, inside, residual = periodic_interval_check(spec, a, b, s, samples)
            if disjoint and inside:
                witnesses[s] = RenormalizationWitness(
                    period=s,
                    interval=create_interval(a, b),
                    disjoint_interiors=True,
                    boundary_residual=residual,
                )
                break
    found = sorted(witnesses.values(), key=lambda w: w.period)
    logger.debug("renormalization_intervals", critical=c, periods=[w.period for w in found])
    return found


INFINITE_RENORMALIZATION_LEVELS = 3


def is_infinitely_renormalizable(witnesses: Sequence[RenormalizationWitness]) -> bool:
    """Horizon-limited verdict: at least three nested renormalization levels"""
    return len(witnesses) >= INFINITE_RENORMALIZATION_LEVELS


# Recurrence between critical points


def critical_orbit(spec: MapSpec, index: int, horizon: int) -> np.ndarray:
    x = spec.critical_points[index].location
    values = np.empty(horizon)
    for k in range(horizon):
        x = float(spec(x))
        values[k] = x
    return values


def partial_order(
    spec: MapSpec,
    horizon: int = 10_000,
    radius_levels: int = 10,
    precision: Optional[Precision] = None,
) -> PartialOrderReport:
    """
    c1 -> c0 when the orbit of c1 hits c0 or enters every neighbourhood of
    radius 2^-k (k <= radius_levels, scaled by the domain) of c0 within horizon.
    """
    _require_interval(spec)
    prec = resolve_precision(precision)
    points = [c.location for c in spec.critical_points]
    smallest = 2.0 ** (-radius_levels) * spec.scale
    hit_tol = prec.endpoint_tolerance(spec.scale)
    edges = []
    parent = list(range(len(points)))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(len(points)):
        orbit = critical_orbit(spec, i, horizon)
        for j, target in enumerate(points):
            distance = float(np.min(np.abs(orbit - target)))
            hit = distance <= hit_tol
            if hit or distance < smallest:
                edges.append(OrderEdge(source=i, target=j, hit=hit, min_distance=distance))
                parent[find(i)] = find(j)
    groups: Dict[int, List[int]] = {}
    for i in range(len(points)):
        groups.setdefault(find(i), []).append(i)
    return PartialOrderReport(
        critical_points=points,
        edges=edges,
        components=sorted(groups.values()),
        horizon=horizon,
        radius_levels=radius_levels,
        horizon_limited=True,
    )
