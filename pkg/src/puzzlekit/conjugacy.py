"""
Combinatorial equivalence and numerical conjugacies between interval maps.

A conjugacy h is built on the real line by matching the backward lattices of the
two admissible sets point by point through identical branch words, then
measured for quasisymmetric and Holder distortion.
"""

from typing import Dict, List, Optional, Sequence, Tuple, Union

import mpmath
import numpy as np
import structlog
from scipy import stats

from .decorators import count_items, track_analysis
from .errors import BadCorrespondence, GridInconsistent, PrecisionExhausted
from .maps import MapSpec
from .orbits import immediate_basin
from .precision import Precision, resolve_precision
from .puzzle import (
    create_admissible_set,
    fibonacci_parameter,
    fibonacci_times,
    make_partition,
    power_step,
    preimage_lattice,
    verify_fibonacci,
)
from .schemas import (
    AdmissibleSet,
    ConjugacyGrid,
    EquivalenceMismatch,
    EquivalenceReport,
    FitRegime,
    OrbitClass,
    OrderMismatchReport,
    PeriodicOrbit,
    QsReport,
    RegimeFit,
    ScaleKappa,
)

logger = structlog.get_logger(__name__)

ZSet = Union[AdmissibleSet, Sequence[float]]

QS_LATTICE_BITS = 10
MIN_SCALE_SPACINGS = 4.0
PARABOLIC_WINDOW = 4.0
FIT_START = 5


def _admissible(spec: MapSpec, Z: ZSet, precision: Optional[Precision]) -> AdmissibleSet:
    if isinstance(Z, AdmissibleSet):
        return Z
    return create_admissible_set(spec, Z, precision=precision)


def detect_orientation(f: MapSpec, g: MapSpec) -> int:
    """+1 when the leftmost laps agree in monotonicity, -1 otherwise"""
    return 1 if f.laps[0].increasing == g.laps[0].increasing else -1


def _oriented(g: MapSpec, Z: AdmissibleSet, orientation: int, precision: Optional[Precision]) -> Tuple[MapSpec, AdmissibleSet]:
    if orientation == 1:
        return g, Z
    reflected = g.reflected()
    return reflected, create_admissible_set(reflected, [-z for z in Z.points], precision=precision)


def _check_correspondence(f: MapSpec, g: MapSpec, Zf: AdmissibleSet, Zg: AdmissibleSet) -> None:
    if len(Zf.points) != len(Zg.points):
        raise BadCorrespondence("admissible sets differ in size", f=len(Zf.points), g=len(Zg.points))
    if Zf.image_index != Zg.image_index:
        raise BadCorrespondence(
            "order-preserving correspondence does not commute with the maps",
            f=Zf.image_index,
            g=Zg.image_index,
        )
    if len(f.turning_points) != len(g.turning_points):
        raise BadCorrespondence(
            "turning point counts differ", f=len(f.turning_points), g=len(g.turning_points)
        )
    orders_f = sorted(c.order for c in f.critical_points)
    orders_g = sorted(c.order for c in g.critical_points)
    # kinks carry no order, so only maps that both declare critical points are compared
    if orders_f and orders_g and orders_f != orders_g:
        raise BadCorrespondence("critical orders differ", f=orders_f, g=orders_g)
    if len(f.laps) != len(g.laps):
        raise BadCorrespondence("lap counts differ", f=len(f.laps), g=len(g.laps))


def _critical_word(
    spec: MapSpec, admissible: AdmissibleSet, index: int, depth: int, precision: Optional[Precision]
) -> Tuple[List[int], Optional[Tuple[int, int]]]:
    """Symbols of c, f(c), ... and (step, Z index) of a landing on Z; c runs over turning points"""
    partition = make_partition(spec, admissible, precision)
    y = spec.turning_points[index]
    symbols: List[int] = []
    for step in range(depth + 1):
        j, hit = partition.symbol(y)
        if hit:
            z_index = int(np.argmin([abs(float(y) - z) for z in admissible.points]))
            return symbols, (step, z_index)
        symbols.append(j)
        y = spec(y)
    return symbols, None


def check_combinatorial_equivalence(
    f: MapSpec,
    g: MapSpec,
    Zf: ZSet,
    Zg: ZSet,
    depth: int = 30,
    orientation: Optional[int] = None,
    precision: Optional[Precision] = None,
) -> EquivalenceReport:
    """
    Critical itineraries of f and g relative to corresponding admissible sets
    agree up to depth, including the step and the Z point where an orbit lands.

    Raises:
        BadCorrespondence: the sets or the critical points cannot be matched in order
    """
    admissible_f = _admissible(f, Zf, precision)
    admissible_g = _admissible(g, Zg, precision)
    orientation = orientation or detect_orientation(f, g)
    g_oriented, admissible_g = _oriented(g, admissible_g, orientation, precision)
    _check_correspondence(f, g_oriented, admissible_f, admissible_g)

    for index in range(len(f.turning_points)):
        word_f, hit_f = _critical_word(f, admissible_f, index, depth, precision)
        word_g, hit_g = _critical_word(g_oriented, admissible_g, index, depth, precision)
        length = max(len(word_f), len(word_g))
        for step in range(length):
            symbol_f = word_f[step] if step < len(word_f) else None
            symbol_g = word_g[step] if step < len(word_g) else None
            if symbol_f != symbol_g:
                mismatch = EquivalenceMismatch(
                    critical_index=index, step=step, symbol_f=symbol_f, symbol_g=symbol_g
                )
                logger.info("combinatorics_differ", critical_index=index, step=step)
                return EquivalenceReport(equivalent=False, depth=depth, mismatch=mismatch)
        if hit_f != hit_g:
            step = min(h[0] for h in (hit_f, hit_g) if h is not None)
            mismatch = EquivalenceMismatch(critical_index=index, step=step, symbol_f=None, symbol_g=None)
            return EquivalenceReport(equivalent=False, depth=depth, mismatch=mismatch)
    return EquivalenceReport(equivalent=True, depth=depth)


# Grids


def conjugacy_residual(f: MapSpec, g: MapSpec, xs: np.ndarray, ys: np.ndarray) -> float:
    """sup |h(f(x_i)) - g(h(x_i))| / |M~| with h piecewise linear on the grid"""
    images = np.clip(f.array(xs), xs[0], xs[-1])
    left = np.interp(images, xs, ys)
    right = g.array(ys)
    return float(np.max(np.abs(left - right)) / g.scale)


@track_analysis(extract_context=count_items)
def build_conjugacy(
    f: MapSpec,
    g: MapSpec,
    Zf: ZSet,
    Zg: ZSet,
    depth: int,
    orientation: Optional[int] = None,
    precision: Optional[Precision] = None,
) -> ConjugacyGrid:
    """
    Match every lattice point of f of depth <= depth with the lattice point of g
    carrying the same branch word. An orientation-reversing pair is matched
    against g conjugated by x -> -x and reflected back.

    Raises:
        BadCorrespondence: the pair is not combinatorially equivalent to depth
        GridInconsistent: the matched grid is not strictly monotone
    """
    prec = resolve_precision(precision)
    admissible_f = _admissible(f, Zf, prec)
    admissible_g = _admissible(g, Zg, prec)
    orientation = orientation or detect_orientation(f, g)
    verdict = check_combinatorial_equivalence(f, g, admissible_f, admissible_g, depth, orientation, prec)
    if not verdict.equivalent:
        raise BadCorrespondence(
            "maps are not combinatorially equivalent", mismatch=verdict.mismatch.model_dump() if verdict.mismatch else None
        )
    g_oriented, admissible_go = _oriented(g, admissible_g, orientation, prec)

    lattice_f = preimage_lattice(f, admissible_f, depth, prec).matched(depth)
    lattice_g = preimage_lattice(g_oriented, admissible_go, depth, prec).matched(depth)
    shared = sorted(set(lattice_f) & set(lattice_g), key=lambda key: lattice_f[key])
    dropped = len(lattice_f) + len(lattice_g) - 2 * len(shared)
    xs = np.array([lattice_f[key] for key in shared])
    ys = np.array([lattice_g[key] for key in shared]) * orientation

    steps = np.diff(ys) * orientation
    if np.any(steps <= 0) or np.any(np.diff(xs) <= 0):
        bad = int(np.argmax(steps <= 0))
        raise GridInconsistent("matched grid is not strictly monotone", index=bad, x=float(xs[bad]), depth=depth)
    residual = conjugacy_residual(f, g, xs, ys)
    logger.info("conjugacy_grid", depth=depth, points=len(xs), dropped=dropped, residual=residual)
    return ConjugacyGrid(
        xs=xs.tolist(),
        ys=ys.tolist(),
        depth=depth,
        orientation=orientation,
        provenance=[int(key[1]) for key in shared],
        residual=residual,
        dropped=dropped,
    )


def basin_conjugacy(
    f: MapSpec,
    g: MapSpec,
    orbit_f: PeriodicOrbit,
    orbit_g: PeriodicOrbit,
    generations: int = 40,
    samples: int = 32,
    precision: Optional[Precision] = None,
) -> ConjugacyGrid:
    """
    Conjugacy on the right half of two immediate basins of attracting fixed
    points with positive multipliers: linear on a fundamental domain
    [f(x0), x0] and spread by h(f^n x) = g^n(h x).

    Raises:
        BadCorrespondence: the orbits are not attracting fixed points with positive multipliers
    """
    for orbit in (orbit_f, orbit_g):
        if orbit.period != 1 or orbit.orbit_class != OrbitClass.ATTRACTING or orbit.multiplier <= 0:
            raise BadCorrespondence(
                "basin plumbing needs attracting fixed points with positive multipliers",
                period=orbit.period,
                multiplier=orbit.multiplier,
            )

    def start(spec: MapSpec, orbit: PeriodicOrbit) -> Tuple[float, float]:
        p = orbit.points[0]
        _, right = immediate_basin(spec, orbit, precision=precision)[0]
        return p, p + 0.5 * (right - p)

    p, x0 = start(f, orbit_f)
    q, y0 = start(g, orbit_g)
    fx0, gy0 = float(f(x0)), float(g(y0))
    s = np.linspace(fx0, x0, samples, endpoint=False)
    t = gy0 + (s - fx0) * (y0 - gy0) / (x0 - fx0)
    xs_parts, ys_parts = [s], [t]
    for _ in range(generations):
        s, t = f.array(s), g.array(t)
        xs_parts.append(s)
        ys_parts.append(t)
    xs = np.concatenate(xs_parts + [np.array([p])])
    ys = np.concatenate(ys_parts + [np.array([q])])
    order = np.argsort(xs)
    xs, ys = xs[order], ys[order]
    keep = np.concatenate([[True], np.diff(xs) > 0])
    xs, ys = xs[keep], ys[keep]
    if np.any(np.diff(ys) <= 0):
        raise GridInconsistent("basin grid is not monotone", generations=generations)
    images = f.array(xs[1:])
    residual = float(np.max(np.abs(np.interp(images, xs, ys) - g.array(ys[1:])))) / g.scale
    return ConjugacyGrid(xs=xs.tolist(), ys=ys.tolist(), depth=generations, residual=residual)


# Quasisymmetric distortion


def _normalised(grid: ConjugacyGrid) -> Tuple[np.ndarray, np.ndarray]:
    xs, ys = np.asarray(grid.xs), np.asarray(grid.ys)
    u = (xs - xs[0]) / (xs[-1] - xs[0])
    v = (ys - ys[0]) / (ys[-1] - ys[0])
    return u, v


def default_scales(grid: ConjugacyGrid) -> List[float]:
    """2^-k from 1/2 down to MIN_SCALE_SPACINGS median grid spacings"""
    u, _ = _normalised(grid)
    spacing = float(np.median(np.diff(u))) if len(u) > 1 else 1.0
    scales = []
    t = 0.5
    while t >= MIN_SCALE_SPACINGS * spacing and t >= 2.0**-40:
        scales.append(t)
        t /= 2.0
    return scales


def _triples(u: np.ndarray, t: float) -> np.ndarray:
    """Centres on the 2^-10 lattice whose two halves each hold at least two grid points"""
    step = min(2.0**-QS_LATTICE_BITS, t)
    x = np.arange(t, 1.0 - t + 0.5 * step, step)
    left = np.searchsorted(u, x, side="left") - np.searchsorted(u, x - t, side="right")
    right = np.searchsorted(u, x + t, side="left") - np.searchsorted(u, x, side="right")
    return x[(left >= 2) & (right >= 2)]


def qs_constant(
    grid: ConjugacyGrid,
    scales: Optional[Sequence[float]] = None,
    parabolic_points: Sequence[float] = (),
) -> QsReport:
    """
    kappa(x, t) = max(r, 1/r), r = (h(x+t) - h(x)) / (h(x) - h(x-t)), over
    symmetric triples on a 2^-10 lattice of the normalised grid.

    Triples within PARABOLIC_WINDOW * t of a declared parabolic point (given in
    the x coordinates of the grid) are reported per scale apart from kappa_max.
    """
    u, v = _normalised(grid)
    x_lo, x_hi = grid.xs[0], grid.xs[-1]
    marks = np.array([(p - x_lo) / (x_hi - x_lo) for p in parabolic_points])
    chosen = list(scales) if scales is not None else default_scales(grid)

    per_scale: List[ScaleKappa] = []
    near: List[ScaleKappa] = []
    increments: List[Tuple[float, float]] = []
    kappa_max, extreme = 1.0, None
    for t in chosen:
        x = _triples(u, t)
        if not len(x):
            continue
        h_minus, h_mid, h_plus = np.interp(x - t, u, v), np.interp(x, u, v), np.interp(x + t, u, v)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = (h_plus - h_mid) / (h_mid - h_minus)
        kappa = np.maximum(ratio, 1.0 / ratio)
        kappa = np.where(np.isfinite(kappa) & (kappa > 0), kappa, np.inf)
        increments.append((t, float(np.max(np.abs(h_plus - h_mid)))))
        close = np.zeros(x.shape, dtype=bool)
        for m in marks:
            close |= np.abs(x - m) <= PARABOLIC_WINDOW * t
        if close.any():
            k = int(np.argmax(kappa[close]))
            near.append(ScaleKappa(scale=t, kappa=float(kappa[close][k]), x_at_max=float(x[close][k])))
        regular = ~close
        if not regular.any():
            continue
        k = int(np.argmax(kappa[regular]))
        value, centre = float(kappa[regular][k]), float(x[regular][k])
        per_scale.append(ScaleKappa(scale=t, kappa=value, x_at_max=centre))
        if value > kappa_max:
            kappa_max, extreme = value, (centre - t, centre, centre + t)

    return QsReport(
        kappa_max=kappa_max,
        per_scale=per_scale,
        near_parabolic=near,
        holder_exponent=_holder_exponent(increments),
        extreme_triple=extreme,
    )


def _holder_exponent(increments: Sequence[Tuple[float, float]]) -> float:
    """Slope of log max|h(x+t) - h(x)| against log t"""
    usable = [(t, d) for t, d in increments if d > 0]
    if len(usable) < 2:
        return 1.0
    fit = stats.linregress(np.log([t for t, _ in usable]), np.log([d for _, d in usable]))
    return float(fit.slope)


# Critical order mismatch


def closest_return_distances(d: int, c: mpmath.mpf, count: int, precision: Precision) -> List[float]:
    """|f^(S_n)(c) - c| for the first count Fibonacci times, c = 0 the critical point"""
    times = fibonacci_times(count)
    step = power_step(d, c)
    distances = []
    with precision.activate():
        y = precision.real(0)
        n = 0
        for s in times:
            while n < s:
                y = step(y)
                n += 1
            distances.append(float(abs(y)))
    return distances


def _regime_fit(d: int, distances: Sequence[float]) -> RegimeFit:
    n = np.arange(1, len(distances) + 1)
    window = slice(FIT_START - 1, None) if len(distances) > FIT_START + 1 else slice(None)
    logs = np.log(np.asarray(distances))[window]
    geometric = stats.linregress(n[window], logs)
    power = stats.linregress(np.log(n[window]), logs)
    geometric_r2, power_r2 = float(geometric.rvalue**2), float(power.rvalue**2)
    return RegimeFit(
        degree=d,
        distances=list(distances),
        geometric_r_squared=geometric_r2,
        power_r_squared=power_r2,
        winner=FitRegime.GEOMETRIC if geometric_r2 >= power_r2 else FitRegime.POWER_LAW,
        strictly_decreasing=all(b < a for a, b in zip(distances, distances[1:])),
    )


def order_mismatch_experiment(
    d1: int = 2, d2: int = 6, depth: int = 20, precision: Optional[Precision] = None
) -> OrderMismatchReport:
    """
    Closest-return decay |f^(S_n)(c) - c| of the Fibonacci maps of degree d1 and
    d2, with geometric and power-law fits over n >= 5. When the Fibonacci
    parameter runs out of precision or fails the closest-return check the depth
    is lowered and the report truncated.
    """
    prec = precision or Precision(bits=256)
    fits: Dict[int, RegimeFit] = {}
    reached = depth
    for d in (d1, d2):
        level = depth
        while level > FIT_START:
            try:
                c = fibonacci_parameter(d, level, prec)
            except PrecisionExhausted:
                logger.warning("fibonacci_depth_lowered", d=d, depth=level, bits=prec.bits)
                level -= 1
                continue
            if verify_fibonacci(d, c, level, prec):
                break
            logger.warning("fibonacci_check_failed", d=d, depth=level, bits=prec.bits)
            level -= 1
        else:
            raise PrecisionExhausted("no usable Fibonacci depth", d=d, bits=prec.bits)
        reached = min(reached, level)
        fits[d] = _regime_fit(d, closest_return_distances(d, c, level + 1, prec))
    return OrderMismatchReport(depth=reached, fits=[fits[d1], fits[d2]], truncated=reached < depth)
