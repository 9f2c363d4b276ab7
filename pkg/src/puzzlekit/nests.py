"""
Principal, good and enhanced nests around critical points, central cascades,
renormalization detection and recurrence classification.
"""

from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import structlog

from .decorators import count_items, track_analysis
from .errors import (
    BoundaryPoint,
    CascadeTooShort,
    ChainBroken,
    DepthOverflow,
    NoEntryWithinHorizon,
    NoReturn,
    RootNotBracketed,
)
from .maps import MapSpec
from .orbits import (
    find_periodic_orbits,
    in_basin,
    is_infinitely_renormalizable,
    partial_order,
    periodic_interval_check,
    renormalization_intervals,
)
from .precision import Precision, Real, bracketed_root, resolve_precision
from .puzzle import (
    Span,
    _make_chain,
    _orbit,
    build_starting_partition,
    first_entry,
    pullback_along,
    puzzle_piece,
)
from .schemas import (
    CascadeRecord,
    CascadeType,
    EnhancedNest,
    EnhancedNestStep,
    GoodNest,
    GoodNestLevel,
    GoodNestStep,
    NestRecord,
    RecurrenceClass,
    RecurrenceKind,
    RecurrenceVerdict,
    RenormalizationWitness,
    create_interval,
)

logger = structlog.get_logger(__name__)

TERMINATING_RATIO = 1.0 + 1e-9
BOUNDARY_RESIDUAL = 1e-6


def long_cascade_threshold(critical_count: int) -> int:
    """N_0 = max(8, 12 b^2 - 4 b)"""
    b = critical_count
    return max(8, 12 * b * b - 4 * b)


def _width(J: Span) -> float:
    return float(J[1]) - float(J[0])


def _inside(J: Span, y: Real, tol: float = 0.0) -> bool:
    return float(J[0]) + tol < float(y) < float(J[1]) - tol


def _contains(outer: Span, inner: Span, tol: float) -> bool:
    return float(outer[0]) - tol <= float(inner[0]) and float(inner[1]) <= float(outer[1]) + tol


# Interval images


def interval_image(spec: MapSpec, J: Span) -> Tuple[float, float]:
    """f(J) for a closed interval, from its ends and the turning points inside"""
    a, b = float(J[0]), float(J[1])
    values = [float(spec(a)), float(spec(b))]
    values.extend(float(spec(t)) for t in spec.turning_points if a < t < b)
    return min(values), max(values)


def minimal_return_time(spec: MapSpec, J: Span, horizon: int = 10_000) -> int:
    """r(J): least k >= 1 with f^k(J) meeting the interior of J"""
    hull: Tuple[float, float] = (float(J[0]), float(J[1]))
    tol = 1e-12 * spec.scale
    for k in range(1, horizon + 1):
        hull = interval_image(spec, hull)
        if hull[1] > float(J[0]) + tol and hull[0] < float(J[1]) - tol:
            return k
    raise NoReturn("interval does not return within horizon", horizon=horizon)


# Principal nest


@track_analysis(extract_context=count_items)
def principal_nest(
    spec: MapSpec,
    I0: Span,
    critical_index: int = 0,
    depth: int = 20,
    horizon: int = 10_000,
    truncate: bool = False,
    min_width: float = 0.0,
    precision: Optional[Precision] = None,
) -> List[NestRecord]:
    """
    I^(i+1) = Comp_c f^-r(I^i) with r the first return time of c to I^i.

    Levels stop early at the first terminating level (I^(i+1) = I^i up to
    roundoff). With ``truncate`` an exhausted width or a missing return ends the
    nest instead of raising.

    Raises:
        NoReturn: c does not return to some level within horizon
        DepthOverflow: the level width fell below the endpoint tolerance
    """
    prec = resolve_precision(precision)
    c = spec.critical_points[critical_index].location
    if not _inside(I0, c):
        raise ValueError("starting interval must contain the critical point")
    floor = 64 * prec.endpoint_tolerance(spec.scale)
    records: List[NestRecord] = []
    piece: Span = I0
    for level in range(depth):
        if _width(piece) < floor:
            if truncate:
                logger.info("nest_truncated", reason="width", level=level)
                break
            raise DepthOverflow("nest level below roundoff", level=level, width=_width(piece))
        try:
            r, child = first_entry(spec, [piece], c, horizon, precision=prec)
        except NoEntryWithinHorizon as exc:
            if truncate:
                logger.info("nest_truncated", reason="no-return", level=level)
                break
            raise NoReturn("critical orbit does not return", level=level, horizon=horizon) from exc
        with prec.activate():
            landing = spec.iterate(prec.real(c), r)
        terminating = _width(piece) / max(_width(child), 1e-300) < TERMINATING_RATIO
        central = _inside(child, landing)
        records.append(
            NestRecord(
                level=level,
                piece=create_interval(*piece),
                return_time=r,
                child=create_interval(*child),
                terminating=terminating,
                central=central,
                non_central=not central,
            )
        )
        logger.debug("nest_level", level=level, return_time=r, width=_width(child), central=central)
        if terminating or _width(child) < min_width:
            break
        piece = child
    return records


def _fixed_point_data(spec: MapSpec, piece: Span, c: float, r: int, prec: Precision) -> Dict[str, float]:
    """Fixed points of f^r on each side of c, named by orientation"""
    found: Dict[str, float] = {}
    for lo, hi in ((float(piece[0]), c), (c, float(piece[1]))):
        try:
            x = float(bracketed_root(lambda t: spec.iterate(t, r) - t, lo, hi, prec))
        except RootNotBracketed:
            continue
        slope = float(spec.iterate_derivative(x, r))
        found["beta" if slope > 0 else "alpha"] = x
    return found


def detect_cascades(
    nest: Sequence[NestRecord],
    spec: MapSpec,
    critical_index: int = 0,
    precision: Optional[Precision] = None,
) -> List[CascadeRecord]:
    """
    Maximal runs of equal return times, typed by the return map on Z^1.

    m equal consecutive return times give a cascade of length m - 1 with pieces
    Z^0 .. Z^m. The return is high when f^r(c) and f^r(dZ^1) lie on opposite
    sides of c, monotone when the chain Z^1 -> Z^0 has no turning point.

    A run is maximal when the level above it returns sooner. A run starting at
    the first level of the nest has no level above: it is taken as maximal and
    recorded with maximal_witnessed False.
    """
    prec = resolve_precision(precision)
    c = spec.critical_points[critical_index].location
    cascades: List[CascadeRecord] = []
    i = 0
    while i < len(nest):
        j = i
        while j + 1 < len(nest) and nest[j + 1].return_time == nest[i].return_time:
            j += 1
        run = nest[i : j + 1]
        if len(run) >= 2 and all(rec.child is not None for rec in run):
            r = run[0].return_time
            pieces = [run[0].piece] + [rec.child for rec in run]  # type: ignore[misc]
            z0, z1 = pieces[0].as_tuple(), pieces[1].as_tuple()
            with prec.activate():
                value = float(spec.iterate(prec.real(c), r))
                edge = float(spec.iterate(prec.real(z1[0]), r))
                spans = pullback_along(spec, z0, _orbit(spec, prec.real(c), r), prec)
            turning = any(_has_turning_point(spec, piece) for piece in spans[:-1])
            if not turning:
                kind = CascadeType.MONOTONE
            elif (value - c) * (edge - c) < 0:
                kind = CascadeType.HIGH
            else:
                kind = CascadeType.LOW
            escape = {}
            for index, point in enumerate(spec.critical_points):
                if _inside(z1, point.location):
                    escape[str(index)] = _escape_time(spec, z1, point.location, r, len(run) + 2)
            cascade = CascadeRecord(
                cascade_id=len(cascades),
                start_level=run[0].level,
                length=len(run) - 1,
                return_time=r,
                pieces=pieces,
                cascade_type=kind,
                maximal=i == 0 or nest[i - 1].return_time < r,
                maximal_witnessed=i > 0,
                escape_times=escape,
                fixed_points=_fixed_point_data(spec, z1, c, r, prec) if kind == CascadeType.HIGH else {},
            )
            cascades.append(cascade)
            logger.info(
                "cascade_detected", start=cascade.start_level, length=cascade.length, type=kind.value
            )
        i = j + 1
    return cascades


def _has_turning_point(spec: MapSpec, J: Span) -> bool:
    return any(J[0] < t < J[1] for t in spec.turning_points)


def _escape_time(spec: MapSpec, z1: Span, x: float, r: int, limit: int) -> int:
    """k_c = min k with f^(kr)(c) outside Z^1"""
    y = x
    for k in range(1, 4 * limit + 1):
        y = float(spec.iterate(y, r))
        if not _inside(z1, y):
            return k
    return 4 * limit + 1


def annotate_cascades(nest: List[NestRecord], cascades: Sequence[CascadeRecord]) -> List[NestRecord]:
    """Copy of the nest with cascade ids on the levels of each run"""
    ids = {}
    for cascade in cascades:
        for level in range(cascade.start_level, cascade.start_level + cascade.length + 1):
            ids[level] = cascade.cascade_id
    return [rec.model_copy(update={"cascade_id": ids.get(rec.level)}) for rec in nest]


def is_terminating(
    spec: MapSpec,
    I: Span,
    critical_index: int = 0,
    depth: int = 60,
    horizon: int = 10_000,
    precision: Optional[Precision] = None,
) -> Optional[RenormalizationWitness]:
    """
    Periodic interval K found where the principal nest stalls, verified
    independently: K..f^(s-1)K have disjoint interiors and f^s(dK) lies in dK.
    """
    nest = principal_nest(spec, I, critical_index, depth, horizon, truncate=True, precision=precision)
    stalled = next((rec for rec in nest if rec.terminating), None)
    if stalled is None:
        return None
    K = stalled.piece
    s = stalled.return_time
    disjoint, _, residual = periodic_interval_check(spec, K.a, K.b, s)
    if not disjoint or residual > BOUNDARY_RESIDUAL * K.length:
        logger.warning("renormalization_check_failed", period=s, residual=residual)
        return None
    return RenormalizationWitness(
        period=s, interval=K, disjoint_interiors=disjoint, boundary_residual=residual
    )


# Children and recurrence


def count_children(
    spec: MapSpec,
    I: Span,
    critical_index: int = 0,
    horizon: int = 4000,
    threshold: Optional[int] = None,
    precision: Optional[Precision] = None,
) -> List[int]:
    """
    Times k at which Comp_c f^-k(I) is a child of I.

    k is a child time when f^k(c) is in I and no j in (0, k) has f^j(c) in
    C_(k-j) = Comp_c f^-(k-j)(I). Enumeration stops once the count passes
    threshold.
    """
    prec = resolve_precision(precision)
    c = spec.critical_points[critical_index].location
    with prec.activate():
        orbit = _orbit(spec, prec.real(c), horizon)
    times = [k for k in range(1, horizon + 1) if _inside(I, orbit[k])]
    visits = set(times)
    pulled: Dict[int, Span] = {}

    def pullback(m: int) -> Span:
        if m not in pulled:
            with prec.activate():
                pulled[m] = pullback_along(spec, I, orbit[: m + 1], prec)[0]
        return pulled[m]

    children: List[int] = []
    for k in times:
        blocked = False
        for j in times:
            if j >= k:
                break
            if k - j in visits and _inside(pullback(k - j), orbit[j]):
                blocked = True
                break
        if not blocked:
            children.append(k)
            if threshold is not None and len(children) > threshold:
                break
    return children


def critical_start_piece(spec: MapSpec, index: int, precision: Precision) -> Optional[Span]:
    """Depth-1 piece of the starting partition around a critical point, None on a boundary"""
    try:
        admissible = build_starting_partition(spec, precision=precision)
        piece = puzzle_piece(spec, admissible, 1, spec.critical_points[index].location, precision)
    except (BoundaryPoint, ChainBroken) as exc:
        logger.info("no_critical_piece", index=index, error=type(exc).__name__)
        return None
    return piece.interval.as_tuple()


@track_analysis()
def classify_recurrence(
    spec: MapSpec,
    horizon: int = 10_000,
    children_horizon: int = 4000,
    children_threshold: int = 64,
    levels: int = 10,
    period_max: int = 4,
    precision: Optional[Precision] = None,
) -> RecurrenceClass:
    """
    Recurrence verdict per critical point and the Omega decomposition.

    Omega_0 holds points in basins or infinitely renormalizable, Omega_1 the
    persistently recurrent ones, Omega_2 the rest. Verdicts are horizon-limited.
    """
    prec = resolve_precision(precision)
    orbits = find_periodic_orbits(spec, period_max, precision=prec)
    order = partial_order(spec, horizon, precision=prec)
    self_edges = {e.source for e in order.edges if e.source == e.target and not e.hit}
    verdicts = []
    for index, point in enumerate(spec.critical_points):
        counts: List[int] = []
        periods: List[int] = []
        if in_basin(spec, point.location, orbits) is not None:
            kind = RecurrenceKind.IN_BASIN
        else:
            witnesses = renormalization_intervals(spec, index, orbits) if point.is_even else []
            periods = [w.period for w in witnesses]
            if is_infinitely_renormalizable(witnesses):
                kind = RecurrenceKind.INFINITELY_RENORMALIZABLE
            elif index not in self_edges:
                kind = RecurrenceKind.NON_RECURRENT
            else:
                kind = RecurrenceKind.PERSISTENTLY_RECURRENT
                start = critical_start_piece(spec, index, prec)
                nest = (
                    principal_nest(spec, start, index, levels, horizon, truncate=True, precision=prec)
                    if start is not None
                    else []
                )
                for rec in nest:
                    found = count_children(
                        spec, rec.piece.as_tuple(), index, children_horizon, children_threshold, prec
                    )
                    counts.append(len(found))
                    if len(found) > children_threshold:
                        kind = RecurrenceKind.RELUCTANTLY_RECURRENT
                        break
        verdicts.append(
            RecurrenceVerdict(
                critical_index=index,
                location=point.location,
                kind=kind,
                children_counts=counts,
                renormalization_periods=periods,
            )
        )
        logger.info("recurrence_verdict", index=index, kind=kind.value, children=counts)

    omega0 = [v.critical_index for v in verdicts if v.kind in (RecurrenceKind.IN_BASIN, RecurrenceKind.INFINITELY_RENORMALIZABLE)]
    omega1 = [v.critical_index for v in verdicts if v.kind == RecurrenceKind.PERSISTENTLY_RECURRENT]
    omega2 = [v.critical_index for v in verdicts if v.critical_index not in omega0 + omega1]
    return RecurrenceClass(
        verdicts=verdicts,
        omega0=omega0,
        omega1=omega1,
        omega1_minimal=_minimal_subset(omega1, [(e.source, e.target) for e in order.edges]),
        omega2=omega2,
        horizon=horizon,
        children_threshold=children_threshold,
    )


def _minimal_subset(members: Sequence[int], edges: Sequence[Tuple[int, int]]) -> List[int]:
    """
    Smallest subset whose omega-limit sets cover those of all members: one
    representative of every class not accumulated on from outside the class.
    """
    reach = {m: {m} for m in members}
    changed = True
    while changed:
        changed = False
        for source, target in edges:
            if source in reach and target in reach:
                for m in members:
                    if source in reach[m] and target not in reach[m]:
                        reach[m].add(target)
                        changed = True
    chosen = []
    for m in sorted(members):
        same_class = {n for n in members if m in reach[n] and n in reach[m]}
        dominated = any(m in reach[n] and n not in same_class for n in members)
        if not dominated and not any(n in same_class for n in chosen):
            chosen.append(m)
    return chosen


# Good nest


def _piece_of(pieces: Dict[int, Span], y: Real) -> Optional[int]:
    for index, piece in pieces.items():
        if _inside(piece, y):
            return index
    return None


def _cascade_runs(spec: MapSpec, outer: Span, inner: Span, index: int, prec: Precision) -> int:
    """Runs of repeated return times in the principal nest from outer down to inner"""
    nest = principal_nest(
        spec, outer, index, depth=200, truncate=True, min_width=_width(inner) * TERMINATING_RATIO, precision=prec
    )
    times = [rec.return_time for rec in nest if _width(rec.piece.as_tuple()) > _width(inner) * TERMINATING_RATIO]
    runs, previous, in_run = 0, None, False
    for r in times:
        if r == previous and not in_run:
            runs += 1
            in_run = True
        elif r != previous:
            in_run = False
        previous = r
    return runs


def good_nest(
    spec: MapSpec,
    V0: Sequence[Span],
    depth: int = 6,
    horizon: int = 10_000,
    precision: Optional[Precision] = None,
) -> GoodNest:
    """
    V^0 > W^0 > V^1 > W^1 > ... with one piece per critical point.

    W_c = L_c(V); k_c is the first time f^k(c) is in V minus W and l_c the first
    landing in W after it; V^(i+1)_c = Comp_c f^-l_c(V^i_c'') where c'' owns the
    W piece landed in. Without k_c the step falls back to the principal step.
    """
    prec = resolve_precision(precision)
    if len(V0) != len(spec.critical_points):
        raise ValueError("one starting piece per critical point")
    V: Dict[int, Span] = {i: V0[i] for i in range(len(V0))}
    levels: List[GoodNestLevel] = []
    for level in range(depth):
        W: Dict[int, Span] = {}
        try:
            for i, point in enumerate(spec.critical_points):
                W[i] = first_entry(spec, [V[i]], point.location, horizon, precision=prec)[1]
        except NoEntryWithinHorizon:
            return GoodNest(levels=levels, truncated=True, reason=f"no return at level {level}")

        steps: List[GoodNestStep] = []
        following: Dict[int, Span] = {}
        for i, point in enumerate(spec.critical_points):
            with prec.activate():
                orbit = _orbit(spec, prec.real(point.location), horizon)
            k = next(
                (t for t in range(1, horizon + 1)
                 if _piece_of(V, orbit[t]) is not None and _piece_of(W, orbit[t]) is None),
                None,
            )
            if k is None:
                following[i] = W[i]
                steps.append(
                    GoodNestStep(
                        critical_index=i,
                        v_piece=create_interval(*V[i]),
                        w_piece=create_interval(*W[i]),
                        collapsed=True,
                    )
                )
                continue
            landing = next(
                ((t, _piece_of(W, orbit[t])) for t in range(k, horizon + 1) if _piece_of(W, orbit[t]) is not None),
                None,
            )
            if landing is None:
                return GoodNest(levels=levels, truncated=True, reason=f"no landing at level {level}")
            l, target = landing
            with prec.activate():
                spans = pullback_along(spec, V[target], orbit[: l + 1], prec)  # type: ignore[index]
            chain = _make_chain(spec, spans)
            following[i] = spans[0]
            steps.append(
                GoodNestStep(
                    critical_index=i,
                    v_piece=create_interval(*V[i]),
                    w_piece=create_interval(*W[i]),
                    escape_time=k,
                    landing_time=l,
                    landing_critical=target,
                    chain_order=chain.order,
                )
            )
            if target != i:
                logger.info("cross_landing", level=level, critical=i, landed=target)

        runs = max(
            (_cascade_runs(spec, V[i], following[i], i, prec) for i in V),
            default=0,
        )
        levels.append(GoodNestLevel(level=level, steps=steps, cascade_runs=runs, cascade_bound_ok=runs <= 1))
        if all(_width(V[i]) / max(_width(following[i]), 1e-300) < TERMINATING_RATIO for i in V):
            return GoodNest(levels=levels, truncated=True, reason="terminating")
        V = following
    return GoodNest(levels=levels)


# Enhanced nest over a cascade


class TransferPiece(NamedTuple):
    """T(I) with the time carrying it onto I; ``close`` marks a piece close to Z^0"""

    piece: Span
    time: int
    close: bool


class CascadeFrame:
    """Operators T, A, B, A-hat and Gamma for pieces above a central cascade"""

    def __init__(
        self,
        spec: MapSpec,
        cascade: CascadeRecord,
        critical_index: int = 0,
        horizon: int = 2000,
        precision: Optional[Precision] = None,
    ):
        self.spec = spec
        self.cascade = cascade
        self.index = critical_index
        self.c0 = spec.critical_points[critical_index].location
        self.horizon = horizon
        self.prec = resolve_precision(precision)
        self.tol = 64 * self.prec.endpoint_tolerance(spec.scale)
        self.z = [p.as_tuple() for p in cascade.pieces]
        self.gamma_limit = 5 * len(spec.critical_points)
        with self.prec.activate():
            self.orbit = _orbit(spec, self.prec.real(self.c0), horizon)
        self._transfer: Dict[Tuple[float, float], TransferPiece] = {}

    def orbit_to(self, k: int) -> List[Real]:
        """c0, f(c0), .., f^k(c0)"""
        if k > 50 * self.horizon:
            raise NoReturn("pullback time beyond the horizon", time=k, horizon=self.horizon)
        with self.prec.activate():
            while len(self.orbit) <= k:
                self.orbit.append(self.spec(self.orbit[-1]))
        return self.orbit[: k + 1]

    def landing(self, I: Span, y: Real) -> Tuple[int, Span]:
        return first_entry(self.spec, [I], y, self.horizon, precision=self.prec)

    def return_time(self, J: Span) -> int:
        return minimal_return_time(self.spec, J)

    def _enter(self, pieces: Dict[int, Tuple[Span, int]], x: Real) -> Tuple[Span, int, Real]:
        """First entry domain of x into the union of pieces, its time down to I and the entry point"""
        k, domain = first_entry(self.spec, [p for p, _ in pieces.values()], x, self.horizon, precision=self.prec)
        with self.prec.activate():
            y = self.spec.iterate(self.prec.real(x), k)
        for span, time in pieces.values():
            if _inside(span, y):
                return domain, k + time, y
        raise ChainBroken("entry point outside every piece", x=float(x), time=k)

    def _critical_joining(
        self, pieces: Dict[int, Tuple[Span, int]], central: Dict[int, Tuple[Span, int]]
    ) -> Optional[Tuple[int, Span, int]]:
        """
        First critical point c outside the pieces whose return R_T(c) misses
        J = L(T), with Comp_c R_T^-1(L_(R_T c)(T)) and its time.
        """
        spans = [p for p, _ in pieces.values()]
        for i, point in enumerate(self.spec.critical_points):
            if i in pieces:
                continue
            try:
                k, _ = first_entry(self.spec, spans, point.location, self.horizon, precision=self.prec)
            except NoEntryWithinHorizon:
                continue
            with self.prec.activate():
                path = _orbit(self.spec, self.prec.real(point.location), k)
            y = path[-1]
            if any(_inside(span, y) for span, _ in central.values()):
                continue
            domain, time, _ = self._enter(pieces, y)
            with self.prec.activate():
                piece = pullback_along(self.spec, domain, path, self.prec)[0]
            return i, piece, k + time
        return None

    def T(self, I: Span) -> TransferPiece:
        """
        T(I) = T_m(c0), grown from T_0 = I.

        While some critical point c_j has its first return to T_j outside
        J_j = L(T_j), T_(j+1) is J_j together with the pullback around c_j of the
        return domain that R_(T_j)(c_j) lands in. The construction ends early on
        a piece close to Z^0: L_c0(I) when c0 returns to I and to Z^0 at the
        same time, or J_j(c0) as soon as it lies inside Z^0.
        """
        key = (float(I[0]), float(I[1]))
        if key in self._transfer:
            return self._transfer[key]
        r, central = self.landing(I, self.c0)
        if r == self.cascade.return_time:
            result = TransferPiece(central, r, True)
        else:
            pieces = {self.index: (I, 0)}
            J = {self.index: self._enter(pieces, self.c0)[:2]}
            result = TransferPiece(I, 0, False)
            while True:
                joining = self._critical_joining(pieces, J)
                if joining is None:
                    result = TransferPiece(*pieces[self.index], False)
                    break
                i, piece, time = joining
                pieces = {**J, i: (piece, time)}
                J = {j: self._enter(pieces, self.spec.critical_points[j].location)[:2] for j in pieces}
                logger.debug("transfer_grown", critical=i, time=time, pieces=len(pieces))
                if _contains(self.z[0], J[self.index][0], self.tol):
                    result = TransferPiece(*J[self.index], True)
                    break
        self._transfer[key] = result
        return result

    def children_containing(self, I: Span, core: Span) -> List[Tuple[int, Span]]:
        """Children Comp_c0 f^-k(I) containing core, oldest first"""
        found = []
        hull = core
        for k in range(1, self.horizon + 1):
            hull = interval_image(self.spec, hull)
            if not _contains(I, hull, self.tol):
                if _width(hull) >= _width(I):
                    break
                continue
            with self.prec.activate():
                spans = pullback_along(self.spec, I, self.orbit_to(k), self.prec)
            if any(_inside(g, self.c0) for g in spans[1:-1]):
                continue
            found.append((k, spans[0]))
        return found

    def B(self, I: Span) -> Tuple[Span, int]:
        """Latest child of T(I) still containing Z^0, with its time nu down to I"""
        top = self.T(I)
        children = self.children_containing(top.piece, self.z[0])
        if not children:
            raise ChainBroken("no child of the piece contains the cascade top", width=_width(I))
        k, piece = children[-1]
        return piece, k + top.time

    def A(self, I: Span) -> Tuple[Span, int]:
        """Comp_c0 f^-nu(L_(f^nu c0)(I)) and its total time"""
        _, nu = self.B(I)
        t, domain = self.landing(I, self.orbit_to(nu)[-1])
        with self.prec.activate():
            piece = pullback_along(self.spec, domain, self.orbit_to(nu), self.prec)[0]
        return piece, nu + t

    def A_hat(self, I: Span) -> Tuple[Span, int]:
        """Pullback of the return domain met at the first return iterate leaving L_c0(I)"""
        _, central = self.landing(I, self.c0)
        total = 0
        y = self.orbit[0]
        for _ in range(self.horizon):
            t, _ = self.landing(I, y)
            total += t
            y = self.orbit_to(total)[-1]
            if not _inside(central, y):
                t2, domain = self.landing(I, y)
                with self.prec.activate():
                    piece = pullback_along(self.spec, domain, self.orbit_to(total), self.prec)[0]
                return piece, total + t2
        raise NoReturn("critical orbit never leaves the central return domain", horizon=self.horizon)

    def Gamma(self, I: Span) -> Optional[Tuple[Span, int, bool]]:
        """Latest-born child containing Z^1 and its time; ties on the return time are flagged"""
        children = self.children_containing(I, self.z[1])
        if not children:
            return None
        q, piece = children[-1]
        r = minimal_return_time(self.spec, piece)
        ties = sum(1 for _, p in children if minimal_return_time(self.spec, p) == r) > 1
        return piece, q, ties

    def short_step(self, I: Span) -> Tuple[Span, int]:
        """Pullback of I close to Z^0 once A-hat(I) lies in Z^0: L_c0(I) if inside Z^0, else A-hat(I)"""
        r, central = self.landing(I, self.c0)
        if _contains(self.z[0], central, self.tol):
            return central, r
        return self.A_hat(I)

    def chain_order(self, target: Span, time: int) -> int:
        """Critical pieces met by the chain of Comp_c0 f^-time(target)"""
        with self.prec.activate():
            spans = pullback_along(self.spec, target, self.orbit_to(time), self.prec)
        return _make_chain(self.spec, spans).order

    def is_close(self, J: Span) -> bool:
        """Contains Z^2 and returns at the cascade return time"""
        if not _contains(J, self.z[2], self.tol):
            return False
        try:
            r, _ = self.landing(J, self.c0)
        except NoEntryWithinHorizon:
            return False
        return r == self.cascade.return_time


def walk_enhanced_nest(frame: CascadeFrame, I: Span, depth: int = 12) -> EnhancedNest:
    """
    Steps I_0 = I > I_1 > ... of the enhanced nest, stopping at the piece E
    close to Z^0.

    From I_(n-1): E = L_c0(I_(n-1)) when that already lies in Z^0; E = T(I_(n-1))
    or E = T A(I_(n-1)) when the transfer construction ends close to Z^0.
    Otherwise M = B A(I_(n-1)) and, for T = 0, 1, .. below 5b, E is the
    short-step pullback of Gamma^T(M) at the first T with A-hat(Gamma^T M) inside
    Z^0. With no such T the step continues from I_n = Gamma^(5b)(M).
    """
    z0 = frame.z[0]
    steps: List[EnhancedNestStep] = []
    piece = I
    e_piece: Optional[Span] = None
    for n in range(depth):
        r, central = frame.landing(piece, frame.c0)
        gammas, ties = 0, False
        if not _contains(central, z0, frame.tol):
            e_piece, time, rule = central, r, "short-step"
        else:
            top = frame.T(piece)
            if top.close:
                e_piece, time, rule = top.piece, top.time, "close"
            else:
                a, s = frame.A(piece)
                top_a = frame.T(a)
                if top_a.close:
                    e_piece, time, rule = top_a.piece, s + top_a.time, "close-after-A"
                else:
                    m, t = frame.B(a)
                    time = s + t
                    while gammas < frame.gamma_limit:
                        hat, _ = frame.A_hat(m)
                        if not _contains(hat, z0, frame.tol):
                            e_piece, extra = frame.short_step(m)
                            time += extra
                            break
                        successor = frame.Gamma(m)
                        if successor is None:
                            raise ChainBroken("no successor of the piece contains Z^1", step=n, gamma=gammas)
                        m, q, tie = successor
                        time += q
                        ties = ties or tie
                        gammas += 1
                    rule = "gamma" if e_piece is None else ("short-step" if gammas == 0 else "gamma-short-step")
                    if e_piece is None:
                        next_piece = m
        steps.append(
            EnhancedNestStep(
                index=n,
                piece=create_interval(*piece),
                pullback_time=time,
                return_time=frame.return_time(piece),
                rule=rule,
                gamma_steps=gammas,
                gamma_ties=ties,
                chain_order=frame.chain_order(piece, time),
            )
        )
        logger.debug("enhanced_step", index=n, rule=rule, time=time, gammas=gammas)
        if e_piece is not None:
            break
        piece = next_piece

    # p_n only exists between consecutive pieces I_n > I_(n+1)
    times = [s.pullback_time for s in steps if s.rule == "gamma"]
    returns = [s.return_time for s in steps[1:]]
    if e_piece is None and steps:
        returns.append(frame.return_time(piece))
    doubling = all(b >= 2 * a for a, b in zip(times, times[1:]))
    bound = all(3 * returns[n] >= p for n, p in enumerate(times) if n < len(returns))
    orders = [s.chain_order for s in steps if s.chain_order is not None]
    logger.info("enhanced_nest", steps=len(steps), times=times, doubling=doubling, bound=bound)
    return EnhancedNest(
        steps=steps,
        e_piece=create_interval(*e_piece) if e_piece is not None else None,
        e_close=e_piece is not None and frame.is_close(e_piece),
        cascade_length=frame.cascade.length,
        max_chain_order=max(orders, default=0),
        doubling_ok=doubling,
        return_bound_ok=bound,
    )


def enhanced_cascade_nest(
    spec: MapSpec,
    I: Span,
    cascade: CascadeRecord,
    critical_index: int = 0,
    depth: int = 12,
    horizon: int = 2000,
    precision: Optional[Precision] = None,
) -> EnhancedNest:
    """
    Enhanced nest above the top Z^0 of a long central cascade, see
    walk_enhanced_nest.

    Raises:
        CascadeTooShort: the cascade is below the long-cascade threshold
        ChainBroken: some piece has no successor containing Z^1
    """
    threshold = long_cascade_threshold(len(spec.critical_points))
    if cascade.length < threshold:
        raise CascadeTooShort(
            "cascade shorter than the long-cascade threshold", length=cascade.length, threshold=threshold
        )
    frame = CascadeFrame(spec, cascade, critical_index, horizon, precision)
    return walk_enhanced_nest(frame, I, depth)
