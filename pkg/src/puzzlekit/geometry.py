"""
Real-geometry measurements: cross-ratios and their distortion along chains,
Gap/Space/Cen of admissible neighbourhoods, niceness moduli, length sums and
Yoccoz profiles of almost parabolic passages.
"""

from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import structlog

from .decorators import keyword_thresholds, track_analysis
from .errors import (
    DegenerateConfiguration,
    NoEntryWithinHorizon,
    NotAdmissible,
    NotComparable,
    NotDiffeomorphic,
)
from .maps import MapSpec
from .nests import _inside, interval_image
from .precision import Precision, resolve_precision
from .puzzle import Span, _overlap_depth, first_entry, is_nice, return_structure
from .schemas import (
    AdmissibleMetrics,
    CascadeRecord,
    Chain,
    CrossRatioReport,
    LengthSumReport,
    NicenessReport,
    YoccozProfile,
    create_interval,
)

logger = structlog.get_logger(__name__)

SCHWARZIAN_SAMPLES = 1000
ALMOST_PARABOLIC_SPREAD = 100.0
TAIL_FRACTION = 0.1
CAUCHY_RATIO = 0.01


# Cross-ratios


def _ordered(J: Span) -> Tuple[float, float]:
    a, b = float(J[0]), float(J[1])
    return (a, b) if a <= b else (b, a)


def cross_ratio(T: Span, J: Span) -> float:
    """
    C(T, J) = |T||J| / (|L||R|), L and R the components of T minus J.

    Raises:
        DegenerateConfiguration: J not strictly inside T or an empty gap
    """
    t0, t1 = _ordered(T)
    j0, j1 = _ordered(J)
    left, right = j0 - t0, t1 - j1
    if j1 <= j0 or left <= 0 or right <= 0:
        raise DegenerateConfiguration("J must lie strictly inside T", T=[t0, t1], J=[j0, j1])
    return (t1 - t0) * (j1 - j0) / (left * right)


def space(T: Span, J: Span) -> float:
    """|L||R| / (|T||J|)"""
    return 1.0 / cross_ratio(T, J)


def gap(J1: Span, J2: Span) -> float:
    """|T||J| / (|J1||J2|) with T the hull of J1, J2 and J the gap between them"""
    (a1, b1), (a2, b2) = sorted([_ordered(J1), _ordered(J2)])
    if a2 < b1:
        raise DegenerateConfiguration("intervals overlap", first=[a1, b1], second=[a2, b2])
    return cross_ratio((a1, b2), (b1, a2)) if a2 > b1 else float("inf")


def _branch_images(spec: MapSpec, T: Span, s: int) -> List[Tuple[float, float]]:
    """f^i(T), i = 0..s, after checking that no critical point sits inside f^i(T), i < s"""
    criticals = [c.location for c in spec.critical_points] + list(spec.kinks)
    images = [_ordered(T)]
    for i in range(s):
        a, b = images[-1]
        inside = [c for c in criticals if a < c < b]
        if inside:
            raise NotDiffeomorphic("iterate has a critical point on the interval", step=i, points=inside)
        images.append(_ordered((spec(a), spec(b))))
    return images


def _negative_schwarzian(spec: MapSpec, images: Sequence[Tuple[float, float]]) -> Optional[bool]:
    if spec.kinks:
        return None
    for a, b in images:
        xs = np.linspace(a, b, SCHWARZIAN_SAMPLES)
        d1, d2, d3 = spec.array(xs, 1), spec.array(xs, 2), spec.array(xs, 3)
        with np.errstate(divide="ignore", invalid="ignore"):
            s = d3 / d1 - 1.5 * (d2 / d1) ** 2
        if not np.all(s[np.isfinite(s)] < 0):
            return False
    return True


def cross_ratio_distortion(
    spec: MapSpec, T: Span, J: Span, s: int, constant: float = 0.5
) -> CrossRatioReport:
    """
    C(f^s, T, J) = C(f^s T, f^s J) / C(T, J) along the chain T, f(T), ...

    Raises:
        NotDiffeomorphic: a critical point lies inside some f^i(T), i < s
        DegenerateConfiguration: J is not strictly inside T
    """
    base = cross_ratio(T, J)
    images = _branch_images(spec, T, s)
    inner = _ordered(J)
    for _ in range(s):
        inner = _ordered((spec(inner[0]), spec(inner[1])))
    image = cross_ratio(images[-1], inner)
    chain = [create_interval(*iv) for iv in images[:-1]]
    longest = max((iv.length for iv in chain), default=0.0)
    report = CrossRatioReport(
        cross_ratio=base,
        distortion=image / base,
        intersection_multiplicity=_overlap_depth(chain) if chain else 1,
        max_length=longest,
        lower_bound=1.0 - constant * longest,
        steps=s,
        negative_schwarzian=_negative_schwarzian(spec, images[:-1]) if s else None,
    )
    if report.negative_schwarzian and report.distortion < 1.0 - 1e-9:
        logger.warning("cross_ratio_contracted", distortion=report.distortion, steps=s)
    return report


# Admissible neighbourhoods


def _component_index(components: Sequence[Span], x: float) -> Optional[int]:
    for j, comp in enumerate(components):
        if _inside(comp, x):
            return j
    return None


def critical_domains(
    spec: MapSpec,
    components: Sequence[Span],
    omega: Sequence[int],
    horizon: int = 1000,
    precision: Optional[Precision] = None,
) -> List[Tuple[float, float]]:
    """Return domains of the components met by the orbits of the Omega points"""
    prec = resolve_precision(precision)
    tol = 64 * prec.endpoint_tolerance(spec.scale)
    found: List[Tuple[float, float]] = []
    for index in omega:
        x = spec.critical_points[index].location
        elapsed = 0
        while elapsed < horizon:
            try:
                k, domain = first_entry(spec, components, x, horizon - elapsed, precision=prec)
            except NoEntryWithinHorizon:
                break
            span = (float(domain[0]), float(domain[1]))
            if not any(abs(span[0] - d[0]) <= tol and abs(span[1] - d[1]) <= tol for d in found):
                found.append(span)
            elapsed += k
            x = float(spec.iterate(x, k))
    return sorted(found)


def metrics_from_domains(
    components: Sequence[Span], domains: Sequence[Span], tol: float = 0.0
) -> Tuple[float, float]:
    """
    (Gap, Space) over the domains.

    Gap runs over all distinct pairs inside one component; Space over the
    domains compactly contained in their component.
    """
    best_gap, best_space = float("inf"), float("inf")
    by_component: Dict[int, List[Tuple[float, float]]] = {}
    for d in domains:
        d = _ordered(d)
        j = _component_index(components, 0.5 * (d[0] + d[1]))
        if j is None:
            raise NotAdmissible("domain outside the neighbourhood", domain=list(d))
        by_component.setdefault(j, []).append(d)
        comp = _ordered(components[j])
        if abs(d[0] - comp[0]) <= tol and abs(d[1] - comp[1]) <= tol:
            continue
        if d[0] <= comp[0] + tol or d[1] >= comp[1] - tol:
            raise NotAdmissible("domain touches the boundary of its component", domain=list(d))
        best_space = min(best_space, space(comp, d))
    for members in by_component.values():
        members.sort()
        for i in range(len(members)):
            for k in range(i + 1, len(members)):
                best_gap = min(best_gap, gap(members[i], members[k]))
    return best_gap, best_space


@track_analysis()
def admissible_metrics(
    spec: MapSpec,
    components: Sequence[Span],
    omega: Sequence[int],
    horizon: int = 1000,
    precision: Optional[Precision] = None,
) -> AdmissibleMetrics:
    """
    Gap, Space, Cen1 and Cen2 of an admissible neighbourhood.

    Domains are the return domains met by the Omega orbits within horizon.
    C2 holds the Omega points whose own component is such a domain, C1 those
    lying in no domain. Cen1 maxes |J|/|f(I(c))| over even c outside C2 and Cen2
    maxes ||J|/|f(I(c))| - 2| over even c in C2, J the domain met by f(c).

    Raises:
        NotAdmissible: a component does not hold exactly one Omega point, or a
            domain touches its component boundary without being the component
    """
    prec = resolve_precision(precision)
    tol = 64 * prec.endpoint_tolerance(spec.scale)
    points = {index: spec.critical_points[index] for index in omega}
    for comp in components:
        held = [i for i, p in points.items() if _inside(comp, p.location)]
        if len(held) != 1:
            raise NotAdmissible("each component must hold one critical point", component=list(comp), held=held)

    domains = critical_domains(spec, components, omega, horizon, prec)
    gap_value, space_value = metrics_from_domains(components, domains, tol)

    def same(a: Span, b: Span) -> bool:
        return abs(float(a[0]) - float(b[0])) <= tol and abs(float(a[1]) - float(b[1])) <= tol

    c1, c2 = [], []
    cen1 = cen2 = 0.0
    for index, point in points.items():
        comp = components[_component_index(components, point.location)]  # type: ignore[index]
        if any(same(comp, d) for d in domains):
            c2.append(index)
        elif not any(_inside(d, point.location) for d in domains):
            c1.append(index)
        if not point.is_even:
            continue
        try:
            _, landing = first_entry(spec, components, float(spec(point.location)), horizon, hat=True, precision=prec)
        except NoEntryWithinHorizon:
            continue
        lo, hi = interval_image(spec, comp)
        ratio = (float(landing[1]) - float(landing[0])) / (hi - lo)
        if index in c2:
            cen2 = max(cen2, abs(ratio - 2.0))
        else:
            cen1 = max(cen1, ratio)
    return AdmissibleMetrics(
        gap=gap_value,
        space=space_value,
        cen1=cen1,
        cen2=cen2,
        domains=len(domains),
        c1=sorted(c1),
        c2=sorted(c2),
        horizon=horizon,
    )


# Niceness


def nice_ratio(I: Span, L: Span) -> float:
    """Largest rho with (1 + 2 rho) L inside I"""
    a, b = _ordered(I)
    lo, hi = _ordered(L)
    m, h = 0.5 * (lo + hi), 0.5 * (hi - lo)
    return (min(m - a, b - m) / h - 1.0) / 2.0


def bounded_geometry(I: Span, x: float) -> float:
    a, b = _ordered(I)
    return min(x - a, b - x) / (b - a)


def niceness_modulus(
    spec: MapSpec,
    I: Span,
    critical_index: int = 0,
    horizon: int = 2000,
    samples: int = 64,
    precision: Optional[Precision] = None,
) -> NicenessReport:
    """
    rho over return domains of recurrent points of I, sampled from the critical
    orbit in its second half, and the bounded-geometry ratio at the critical point.
    """
    prec = resolve_precision(precision)
    c = spec.critical_points[critical_index].location
    orbit = spec.orbit(c, horizon)
    recurrent = [c] + [float(y) for y in orbit[horizon // 2 :] if _inside(I, y)]
    recurrent = recurrent[: samples + 1]
    rho = float("inf")
    used = 0
    for x in recurrent:
        try:
            _, domain = first_entry(spec, [I], x, horizon, precision=prec)
        except NoEntryWithinHorizon:
            continue
        rho = min(rho, nice_ratio(I, domain))
        used += 1
    return NicenessReport(
        rho_nice=max(rho, 0.0) if used else 0.0,
        bounded_geometry=bounded_geometry(I, c),
        samples=used,
    )


# Length sums


def _tail_report(lengths: Sequence[float], power: float, hypotheses: Dict[str, str]) -> LengthSumReport:
    # the series is read in decreasing order so the tail holds the smallest terms
    terms = np.sort(np.asarray(lengths, dtype=float) ** power)[::-1]
    total = float(terms.sum())
    count = max(int(round(len(terms) * TAIL_FRACTION)), 1)
    tail = float(terms[-count:].sum()) if len(terms) > 1 else 0.0
    return LengthSumReport(
        exponent=power,
        total=total,
        tail=tail,
        cauchy=total > 0 and tail < CAUCHY_RATIO * total,
        terms=len(terms),
        hypotheses=hypotheses,
    )


def length_sum(chain: Chain, alpha: float = 0.0, exponent: Optional[float] = None) -> LengthSumReport:
    """
    Sum of |G_j|^(1+alpha) along a chain with a Cauchy tail check: the smallest
    tenth of the terms must carry under 1% of the total. ``exponent`` overrides
    1 + alpha, e.g. d + alpha on a parabolic chain.
    """
    power = exponent if exponent is not None else 1.0 + alpha
    hypotheses = {"diffeomorphic": "checked" if chain.order == 0 else "failed"}
    return _tail_report([p.length for p in chain.pieces], power, hypotheses)


@track_analysis(stamp=keyword_thresholds("alpha", "horizon", "samples"))
def nice_length_sum(
    spec: MapSpec,
    I: Sequence[Span],
    alpha: float = 0.0,
    horizon: int = 1000,
    samples: int = 2000,
    precision: Optional[Precision] = None,
) -> LengthSumReport:
    """
    Sum of |D|^(1+alpha) over the entry domains of a nice set found by sampling.

    Niceness is checked; basin avoidance and boundary behaviour cannot be
    sampled and are tagged as unverified hypotheses.
    """
    structure = return_structure(spec, I, horizon, samples, precision=precision)
    hypotheses = {
        "nice": "checked" if is_nice(spec, I, precision=precision) else "failed",
        "coverage": f"{structure.coverage:.3f}",
        "avoids_basins": "unverified hypothesis",
        "boundary_behaviour": "unverified hypothesis",
    }
    return _tail_report([d.interval.length for d in structure.domains], 1.0 + alpha, hypotheses)


# Yoccoz profiles


def _profile(
    lengths: Sequence[float],
    base: float,
    sigma: float,
    window: Tuple[int, int],
    one_sided: bool,
) -> YoccozProfile:
    a = len(lengths)
    lo, hi = window
    lo, hi = max(lo, 1), min(hi, a - 1)
    if hi < lo:
        raise NotComparable("profile window is empty", domains=a, window=list(window))
    normalized = []
    for i in range(lo, hi + 1):
        scale = i if one_sided else min(i, a - i)
        normalized.append(lengths[i] * scale * scale / base)
    top, bottom = max(normalized), min(normalized)
    spread = top / bottom if bottom > 0 else float("inf")
    return YoccozProfile(
        lengths=list(lengths),
        normalized=normalized,
        base_length=base,
        constant=max(top, 1.0 / bottom if bottom > 0 else float("inf")),
        spread=spread,
        sigma=sigma,
        window=(lo, hi),
        almost_parabolic=spread <= ALMOST_PARABOLIC_SPREAD,
        one_sided=one_sided,
    )


@track_analysis()
def yoccoz_profile(
    spec: MapSpec,
    cascade: CascadeRecord,
    critical_index: int = 0,
    sigma: float = 1e-3,
    margin: int = 5,
) -> YoccozProfile:
    """
    Fundamental domains of the passage of R = f^r through Z^1 along the critical
    orbit, normalised by |I|/min(i, a - i)^2 with I the hull of the passage.

    Raises:
        NotComparable: the passage is not monotone or an end domain is shorter
            than sigma |I|
    """
    c = spec.critical_points[critical_index].location
    z1 = cascade.pieces[1].as_tuple()
    r = cascade.return_time
    ys = []
    y = float(spec.iterate(c, r))
    while _inside(z1, y) and len(ys) < 100 * (cascade.length + 2):
        ys.append(y)
        y = float(spec.iterate(y, r))
    steps = np.diff(np.array(ys))
    if len(steps) < 2 or not (np.all(steps > 0) or np.all(steps < 0)):
        raise NotComparable("cascade passage is not monotone", points=len(ys))
    lengths = np.abs(steps).tolist()
    base = abs(ys[-1] - ys[0])
    if lengths[0] <= sigma * base or lengths[-1] <= sigma * base:
        raise NotComparable(
            "end fundamental domains are below sigma", first=lengths[0], last=lengths[-1], sigma=sigma
        )
    profile = _profile(lengths, base, sigma, (margin, len(lengths) - margin), one_sided=False)
    logger.info("yoccoz_profile", domains=len(lengths), constant=profile.constant, spread=profile.spread)
    return profile


def yoccoz_profile_explicit(
    spec: MapSpec,
    start: float,
    stop: float,
    window: Optional[Tuple[int, int]] = None,
    sigma: float = 0.0,
    max_steps: int = 1_000_000,
) -> YoccozProfile:
    """
    One-sided profile of an increasing branch given by its backward orbit from
    ``stop`` down to ``start``: Delta_i = [g^-(i+1)(stop), g^-i(stop)].
    """
    lap = spec.lap_index(stop)
    ys = [stop]
    while ys[-1] > start and len(ys) < max_steps:
        previous = spec.lap_preimage(lap, ys[-1])
        if previous is None or previous >= ys[-1]:
            break
        ys.append(float(previous))
    lengths = [ys[i] - ys[i + 1] for i in range(len(ys) - 1)]
    base = stop - start
    chosen = window or (1, len(lengths) - 1)
    return _profile(lengths, base, sigma, chosen, one_sided=True)
