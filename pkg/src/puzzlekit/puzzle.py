"""
Real puzzle pieces generated by an admissible set.

Depth-n pieces are the components of M minus the backward lattice
f^-k(Z u dM), k <= n. Endpoints are solved by bisection on monotone branches;
points that land on the lattice are reported as BoundaryPoint and never assigned
to a side.
"""

import bisect
import math
import threading
from typing import Callable, Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import mpmath
import numpy as np
import structlog

from .errors import (
    BoundaryPoint,
    ChainBroken,
    DepthOverflow,
    NoEntryWithinHorizon,
    PartitionUnavailable,
    PrecisionExhausted,
)
from .families import full_family_parameter
from .maps import MapSpec
from .orbits import (
    find_periodic_orbits,
    immediate_basin,
    in_basin,
    is_infinitely_renormalizable,
    renormalization_intervals,
)
from .precision import Precision, Real, resolve_precision
from .schemas import (
    AdmissibleSet,
    Chain,
    EntryDomain,
    EntryKind,
    FibonacciReport,
    Interval,
    Itinerary,
    OrbitClass,
    PartitionLevel,
    PartitionTree,
    PeriodicOrbit,
    PuzzlePiece,
    ReturnStructure,
    create_interval,
)

logger = structlog.get_logger(__name__)

Span = Tuple[Real, Real]

SNAP_TOLERANCE = 1e-8


# Admissible sets


def create_admissible_set(
    spec: MapSpec,
    points: Iterable[float],
    sources: Optional[Dict[str, List[float]]] = None,
    precision: Optional[Precision] = None,
) -> AdmissibleSet:
    """
    Admissible set from explicit points; forward invariance is checked.

    Raises:
        PartitionUnavailable: some f(z) is not a member of the set
    """
    prec = resolve_precision(precision)
    ordered = _dedupe(sorted(float(p) for p in points), prec.scaled(SNAP_TOLERANCE) * spec.scale)
    tol = prec.scaled(SNAP_TOLERANCE) * spec.scale
    image_index = []
    for z in ordered:
        image = float(spec(z))
        matches = [i for i, w in enumerate(ordered) if abs(w - image) <= tol]
        if not matches:
            raise PartitionUnavailable("set is not forward invariant", point=z, image=image)
        image_index.append(matches[0])
    return AdmissibleSet(
        points=ordered,
        image_index=image_index,
        domain_boundary=spec.domain,
        sources=sources or {},
    )


def _dedupe(values: Sequence[float], tol: float) -> List[float]:
    out: List[float] = []
    for v in values:
        if not out or v - out[-1] > tol:
            out.append(v)
    return out


def _forward_closure(spec: MapSpec, seeds: Sequence[float], tol: float, max_steps: int = 64) -> List[float]:
    closed: List[float] = []

    def known(y: float) -> Optional[float]:
        for z in closed:
            if abs(z - y) <= tol:
                return z
        return None

    for seed in seeds:
        y = float(seed)
        for _ in range(max_steps):
            if known(y) is not None:
                break
            closed.append(y)
            y = float(spec(y))
        else:
            logger.warning("closure_not_reached", seed=seed)
    return sorted(closed)


def _post_critical(spec: MapSpec, horizon: int = 2000) -> np.ndarray:
    values = []
    for c in spec.critical_points:
        x = c.location
        for _ in range(horizon):
            x = float(spec(x))
            values.append(x)
    return np.array(values)


def build_starting_partition(
    spec: MapSpec,
    period_max: int = 4,
    grid_density: int = 2000,
    orbits: Optional[List[PeriodicOrbit]] = None,
    precision: Optional[Precision] = None,
) -> AdmissibleSet:
    """
    Starting admissible set Z.

    Z holds the repelling and parabolic fixed points, every parabolic (or
    borderline) cycle, the boundaries of immediate basins, and the boundary orbit
    of a periodic interval around each even critical point outside the basins,
    closed under forward images. Interior points met by the post-critical orbit
    are dropped while a fixed point survives.

    Raises:
        PartitionUnavailable: no periodic orbit up to period_max
    """
    prec = resolve_precision(precision)
    if orbits is None:
        orbits = find_periodic_orbits(spec, period_max, grid_density, prec)
    if not orbits:
        raise PartitionUnavailable("no periodic orbit found", period_max=period_max)

    sources: Dict[str, List[float]] = {"fixed": [], "parabolic": [], "basin": [], "renormalization": []}
    for orbit in orbits:
        parabolic = orbit.orbit_class == OrbitClass.PARABOLIC or orbit.borderline
        if orbit.period == 1 and (parabolic or orbit.orbit_class == OrbitClass.REPELLING):
            sources["fixed"].extend(orbit.points)
        if parabolic:
            sources["parabolic"].extend(orbit.points)
        if orbit.is_attracting or parabolic:
            for a, b in immediate_basin(spec, orbit, precision=prec):
                sources["basin"].extend([a, b])

    for index, critical in enumerate(spec.critical_points):
        if not critical.is_even or in_basin(spec, critical.location, orbits) is not None:
            continue
        witnesses = renormalization_intervals(spec, index, orbits)
        if not witnesses:
            continue
        chosen = witnesses[0] if is_infinitely_renormalizable(witnesses) else witnesses[-1]
        sources["renormalization"].extend([chosen.interval.a, chosen.interval.b])

    if not sources["fixed"]:
        logger.warning("no_repelling_fixed_point", name=spec.name)
    tol = prec.scaled(SNAP_TOLERANCE) * spec.scale
    seeds = [p for key in ("fixed", "parabolic", "basin", "renormalization") for p in sources[key]]
    closed = _forward_closure(spec, seeds, tol)

    lo, hi = spec.domain
    pc = _post_critical(spec)

    def on_boundary(z: float) -> bool:
        return abs(z - lo) <= tol or abs(z - hi) <= tol

    def in_pc(z: float) -> bool:
        return pc.size > 0 and not on_boundary(z) and bool(np.min(np.abs(pc - z)) <= tol)

    bad = {z for z in closed if in_pc(z)}
    kept = [z for z in closed if not _reaches(spec, z, bad, tol)]
    pc_disjoint = True
    if bad:
        fixed_left = [z for z in kept if abs(float(spec(z)) - z) <= tol]
        if fixed_left:
            closed = kept
        else:
            pc_disjoint = False
            logger.warning("partition_meets_post_critical_set", points=sorted(bad))
    admissible = create_admissible_set(spec, closed, sources, prec)
    admissible = admissible.model_copy(update={"pc_disjoint": pc_disjoint})
    logger.info("starting_partition", name=spec.name, points=admissible.points)
    return admissible


def _reaches(spec: MapSpec, z: float, bad: set, tol: float, steps: int = 64) -> bool:
    y = z
    for _ in range(steps):
        if any(abs(y - b) <= tol for b in bad):
            return True
        y = float(spec(y))
    return False


# Partition symbols


class Partition(NamedTuple):
    """Cut points of M minus Z and the tolerance used to compare against them"""

    cuts: List[float]
    z_points: List[float]
    tol: float

    @property
    def components(self) -> List[Tuple[float, float]]:
        return list(zip(self.cuts, self.cuts[1:]))

    def is_cut(self, y: Real) -> bool:
        value = float(y)
        return any(abs(value - c) <= self.tol for c in self.cuts)

    def symbol(self, y: Real) -> Tuple[int, bool]:
        """(component index, hit Z)"""
        value = float(y)
        if any(abs(value - z) <= self.tol for z in self.z_points):
            return -1, True
        last = len(self.cuts) - 2
        for j in range(last + 1):
            if value < self.cuts[j + 1] - self.tol:
                return j, False
        return last, False


def make_partition(spec: MapSpec, admissible: AdmissibleSet, precision: Optional[Precision] = None) -> Partition:
    prec = resolve_precision(precision)
    tol = prec.endpoint_tolerance(spec.scale) * 64
    lo, hi = spec.domain
    cuts = _dedupe(sorted({lo, hi, *admissible.points}), tol)
    return Partition(cuts=cuts, z_points=list(admissible.points), tol=tol)


def itinerary(
    spec: MapSpec, admissible: AdmissibleSet, x: Real, n: int, precision: Optional[Precision] = None
) -> Itinerary:
    """Symbols of f^i(x), i < n; truncated at the first step landing on Z"""
    partition = make_partition(spec, admissible, precision)
    symbols = []
    y = x
    for i in range(n):
        j, hit = partition.symbol(y)
        if hit:
            return Itinerary(symbols=symbols, truncated=True, hit_step=i)
        symbols.append(j)
        y = spec(y)
    return Itinerary(symbols=symbols)


# Pullbacks


def _lap_span(spec: MapSpec, i: int, J: Span, tol: float, prec: Precision) -> Tuple[Real, Real, bool, bool]:
    """Part of lap i mapped into J; flags say whether it reaches each lap end"""
    lap = spec.laps[i]
    a_J, b_J = J
    lo, hi = prec.real(lap.lo), prec.real(lap.hi)
    f_lo, f_hi = spec(lo), spec(hi)
    if lap.increasing:
        left_open = a_J + tol < f_lo
        right_open = f_hi < b_J - tol
        left = lo if a_J <= f_lo + tol else spec.lap_preimage(i, a_J, prec)
        right = hi if f_hi - tol <= b_J else spec.lap_preimage(i, b_J, prec)
    else:
        left_open = f_lo < b_J - tol
        right_open = a_J + tol < f_hi
        left = lo if f_lo - tol <= b_J else spec.lap_preimage(i, b_J, prec)
        right = hi if a_J <= f_hi + tol else spec.lap_preimage(i, a_J, prec)
    if left is None or right is None:
        raise ChainBroken("pullback does not meet the branch", lap=i, interval=[float(a_J), float(b_J)])
    return left, right, left_open, right_open


def pullback_component(
    spec: MapSpec, J: Span, x: Real, precision: Optional[Precision] = None
) -> Span:
    """
    Comp_x f^-1(J) for an open interval J containing f(x).

    The component is followed across a turning point t only when f(t) lies in
    the open interval J.
    """
    prec = resolve_precision(precision)
    tol = prec.endpoint_tolerance(spec.scale)
    laps = spec.laps
    i = spec.lap_index(float(x))
    left, right, left_open, right_open = _lap_span(spec, i, J, tol, prec)
    if not (float(left) - tol <= float(x) <= float(right) + tol):
        # x sits on a turning point shared with the next lap
        if i + 1 < len(laps):
            i += 1
            left, right, left_open, right_open = _lap_span(spec, i, J, tol, prec)
    j = i
    while left_open and j > 0:
        j -= 1
        left, _, left_open, _ = _lap_span(spec, j, J, tol, prec)
    j = i
    while right_open and j < len(laps) - 1:
        j += 1
        _, right, _, right_open = _lap_span(spec, j, J, tol, prec)
    return left, right


def _orbit(spec: MapSpec, x: Real, n: int) -> List[Real]:
    points = [x]
    for _ in range(n):
        points.append(spec(points[-1]))
    return points


def pullback_along(
    spec: MapSpec, J: Span, orbit: Sequence[Real], precision: Optional[Precision] = None
) -> List[Span]:
    """G_s = J, G_j = Comp_(orbit[j]) f^-1(G_(j+1)); returns G_0..G_s"""
    pieces = [J]
    for point in reversed(orbit[:-1]):
        pieces.append(pullback_component(spec, pieces[-1], point, precision))
    pieces.reverse()
    return pieces


def puzzle_piece(
    spec: MapSpec,
    admissible: AdmissibleSet,
    n: int,
    x: Real,
    precision: Optional[Precision] = None,
    cache: Optional["PuzzleCache"] = None,
) -> PuzzlePiece:
    """
    The depth-n piece Y_n(x).

    Raises:
        BoundaryPoint: f^k(x) lies on Z or on dM for some k <= n
        DepthOverflow: n beyond the depth cap of the active precision
    """
    prec = resolve_precision(precision)
    if n > prec.depth_cap:
        raise DepthOverflow("depth beyond the cap for this precision", depth=n, cap=prec.depth_cap)
    spec.check_domain(x)
    partition = make_partition(spec, admissible, prec)
    with prec.activate():
        orbit = _orbit(spec, prec.real(x), n)
        address = []
        for k, y in enumerate(orbit):
            if partition.is_cut(y):
                raise BoundaryPoint("orbit lands on the partition lattice", x=float(x), step=k)
            j, _ = partition.symbol(y)
            address.append(j)
        target = address.pop()
        J: Span = (prec.real(partition.cuts[target]), prec.real(partition.cuts[target + 1]))
        a, b = pullback_along(spec, J, orbit, prec)[0]
    piece = PuzzlePiece(interval=create_interval(a, b), depth=n, address=address, target=target)
    if cache is not None:
        cache.insert(piece)
    return piece


# Backward lattice


class PreimageLattice:
    """
    Sorted backward lattice of Z u dM up to a depth.

    Every point carries the depth at which it was born and a word key
    (code * laps + lap at each pullback) identifying its branch word.
    """

    def __init__(self, points: np.ndarray, born: np.ndarray, keys: np.ndarray, laps: int, base: int):
        self.points = points
        self.born = born
        self.keys = keys
        self.laps = laps
        self.base = base

    @property
    def depth(self) -> int:
        return int(self.born.max()) if self.born.size else 0

    def upto(self, n: int) -> np.ndarray:
        return self.points[self.born <= n]

    def pieces(self, n: int) -> List[Tuple[float, float]]:
        cuts = self.upto(n)
        return list(zip(cuts[:-1].tolist(), cuts[1:].tolist()))

    def matched(self, n: int) -> Dict[Tuple[int, int], float]:
        """(born, key) -> point for points of depth <= n"""
        mask = self.born <= n
        return {
            (int(b), int(k)): float(p)
            for p, b, k in zip(self.points[mask], self.born[mask], self.keys[mask])
        }


def preimage_lattice(
    spec: MapSpec,
    admissible: AdmissibleSet,
    depth: int,
    precision: Optional[Precision] = None,
) -> PreimageLattice:
    """Vectorised backward lattice; coincident preimages keep the lowest lap index"""
    prec = resolve_precision(precision)
    if depth > prec.depth_cap:
        raise DepthOverflow("depth beyond the cap for this precision", depth=depth, cap=prec.depth_cap)
    tol = prec.endpoint_tolerance(spec.scale) * 4
    lo, hi = spec.domain
    base = np.array(_dedupe(sorted({lo, hi, *admissible.points}), tol))
    n_laps = len(spec.laps)
    big = float(len(base)) * float(n_laps) ** depth > 2.0**62
    key_dtype = object if big else np.int64

    points = base.copy()
    born = np.zeros(base.size, dtype=np.int64)
    keys = np.arange(base.size).astype(key_dtype)
    frontier, frontier_keys = base.copy(), keys.copy()
    for k in range(1, depth + 1):
        new_points, new_keys = [], []
        for lap in range(n_laps):
            roots = spec.lap_preimage_array(lap, frontier)
            ok = ~np.isnan(roots)
            new_points.append(roots[ok])
            new_keys.append(frontier_keys[ok] * n_laps + lap)
        if not new_points:
            break
        cand = np.concatenate(new_points)
        cand_keys = np.concatenate(new_keys)
        order = np.argsort(cand, kind="stable")
        cand, cand_keys = cand[order], cand_keys[order]
        keep = np.ones(cand.size, dtype=bool)
        keep[1:] = np.diff(cand) > tol
        cand, cand_keys = cand[keep], cand_keys[keep]
        if points.size and cand.size:
            pos = np.searchsorted(points, cand)
            left = np.abs(cand - points[np.clip(pos - 1, 0, points.size - 1)])
            right = np.abs(points[np.clip(pos, 0, points.size - 1)] - cand)
            fresh = np.minimum(left, right) > tol
            cand, cand_keys = cand[fresh], cand_keys[fresh]
        if cand.size == 0:
            frontier, frontier_keys = cand, cand_keys
            continue
        merged = np.concatenate([points, cand])
        order = np.argsort(merged, kind="stable")
        points = merged[order]
        born = np.concatenate([born, np.full(cand.size, k, dtype=np.int64)])[order]
        keys = np.concatenate([keys, cand_keys])[order]
        frontier, frontier_keys = cand, cand_keys
    logger.debug("preimage_lattice", depth=depth, points=int(points.size))
    return PreimageLattice(points, born, keys, n_laps, base.size)


def puzzle_pieces(
    spec: MapSpec,
    admissible: AdmissibleSet,
    n: int,
    lattice: Optional[PreimageLattice] = None,
    precision: Optional[Precision] = None,
) -> List[PuzzlePiece]:
    """Every depth-n piece, addressed by the itinerary of its midpoint"""
    if lattice is None or lattice.depth < n:
        lattice = preimage_lattice(spec, admissible, n, precision)
    partition = make_partition(spec, admissible, precision)
    pieces = []
    for a, b in lattice.pieces(n):
        y = 0.5 * (a + b)
        symbols = []
        for _ in range(n + 1):
            j, _ = partition.symbol(y)
            symbols.append(j)
            y = float(spec(y))
        pieces.append(
            PuzzlePiece(interval=create_interval(a, b), depth=n, address=symbols[:-1], target=symbols[-1])
        )
    return pieces


def partition_tree(
    spec: MapSpec, admissible: AdmissibleSet, depth: int, precision: Optional[Precision] = None
) -> PartitionTree:
    lattice = preimage_lattice(spec, admissible, depth, precision)
    levels = []
    for n in range(depth + 1):
        pieces = puzzle_pieces(spec, admissible, n, lattice, precision)
        levels.append(
            PartitionLevel(
                depth=n,
                pieces=[{"a": p.interval.a, "b": p.interval.b, "address": p.address} for p in pieces],
            )
        )
    return PartitionTree(admissible=list(admissible.points), levels=levels)


class PuzzleCache:
    """
    Piece cache with concurrent reads and a single writer per depth level.

    Each level keeps its endpoints sorted, so a duplicate lookup is a bisection.
    ``verify`` checks that all cached pieces are nested or disjoint with one
    sort and a stack sweep.
    """

    def __init__(self, tolerance: float = 0.0):
        self.tolerance = tolerance
        self._levels: Dict[int, List[PuzzlePiece]] = {}
        self._ends: Dict[int, List[Tuple[float, float]]] = {}
        self._locks: Dict[int, threading.Lock] = {}
        self._guard = threading.Lock()

    def _lock(self, depth: int) -> threading.Lock:
        with self._guard:
            return self._locks.setdefault(depth, threading.Lock())

    def insert(self, piece: PuzzlePiece) -> None:
        a, b = piece.interval.a, piece.interval.b
        with self._lock(piece.depth):
            ends = self._ends.setdefault(piece.depth, [])
            i = bisect.bisect_left(ends, (a - self.tolerance, -math.inf))
            while i < len(ends) and ends[i][0] <= a + self.tolerance:
                if abs(ends[i][1] - b) <= self.tolerance:
                    return
                i += 1
            bisect.insort(ends, (a, b))
            self._levels.setdefault(piece.depth, []).append(piece)

    def extend(self, pieces: Iterable[PuzzlePiece]) -> None:
        for piece in pieces:
            self.insert(piece)

    def level(self, depth: int) -> List[PuzzlePiece]:
        return list(self._levels.get(depth, []))

    def __len__(self) -> int:
        return sum(len(v) for v in self._levels.values())

    def verify(self) -> List[Tuple[Interval, Interval]]:
        """Pairs violating nested-or-disjoint"""
        tol = self.tolerance
        intervals = sorted(
            (p.interval for level in self._levels.values() for p in level),
            key=lambda iv: (iv.a, -iv.b),
        )
        violations = []
        stack: List[Interval] = []
        for iv in intervals:
            while stack and stack[-1].b <= iv.a + tol:
                stack.pop()
            if stack and iv.b > stack[-1].b + tol:
                violations.append((stack[-1], iv))
            stack.append(iv)
        if violations:
            logger.error("nested_or_disjoint_violated", count=len(violations))
        return violations


def nested_or_disjoint(first: Span, second: Span, tol: float = 0.0) -> bool:
    a1, b1 = float(first[0]), float(first[1])
    a2, b2 = float(second[0]), float(second[1])
    if b1 <= a2 + tol or b2 <= a1 + tol:
        return True
    return (a1 - tol <= a2 and b2 <= b1 + tol) or (a2 - tol <= a1 and b1 <= b2 + tol)


# Entry domains and niceness


def _component_of(P: Sequence[Span], y: Real, tol: float) -> Optional[int]:
    value = float(y)
    for j, (a, b) in enumerate(P):
        if float(a) + tol < value < float(b) - tol:
            return j
    return None


def first_entry(
    spec: MapSpec,
    P: Sequence[Span],
    x: Real,
    horizon: int = 10_000,
    hat: bool = False,
    precision: Optional[Precision] = None,
) -> Tuple[int, Span]:
    """
    First entry of x into the nice set P and the domain Comp_x f^-k(P).

    With ``hat`` a point already in P gets (0, its component of P).

    Raises:
        NoEntryWithinHorizon: no k in 1..horizon with f^k(x) in P
    """
    prec = resolve_precision(precision)
    tol = prec.endpoint_tolerance(spec.scale)
    with prec.activate():
        x_r = prec.real(x)
        if hat:
            j = _component_of(P, x_r, tol)
            if j is not None:
                return 0, P[j]
        orbit = [x_r]
        for k in range(1, horizon + 1):
            orbit.append(spec(orbit[-1]))
            j = _component_of(P, orbit[-1], tol)
            if j is not None:
                target = (prec.real(P[j][0]), prec.real(P[j][1]))
                return k, pullback_along(spec, target, orbit, prec)[0]
    raise NoEntryWithinHorizon("orbit does not enter the set", x=float(x), horizon=horizon)


def landing_domain(
    spec: MapSpec, P: Sequence[Span], x: Real, horizon: int = 10_000, precision: Optional[Precision] = None
) -> Span:
    """The hat variant: P itself when x is in P, the entry domain otherwise"""
    return first_entry(spec, P, x, horizon, hat=True, precision=precision)[1]


def is_nice(
    spec: MapSpec,
    P: Sequence[Span],
    horizon: int = 1000,
    admissible: Optional[AdmissibleSet] = None,
    precision: Optional[Precision] = None,
) -> bool:
    """
    No boundary orbit of P re-enters its interior within horizon.

    An orbit stops once it snaps onto Z or dM (forward invariant from there) or
    becomes periodic.
    """
    prec = resolve_precision(precision)
    tol = prec.endpoint_tolerance(spec.scale)
    snap = prec.scaled(SNAP_TOLERANCE) * spec.scale
    anchors = list(spec.domain) + (list(admissible.points) if admissible else [])
    for a, b in P:
        for end in (a, b):
            y = float(end)
            seen: List[float] = []
            for _ in range(horizon):
                y = float(spec(y))
                y = next((z for z in anchors if abs(z - y) <= snap), y)
                if _component_of(P, y, tol) is not None:
                    return False
                if any(abs(y - s) <= snap for s in seen):
                    break
                seen.append(y)
    return True


def chain_of(
    spec: MapSpec,
    J: Span,
    s: int,
    target: Span,
    precision: Optional[Precision] = None,
) -> Chain:
    """
    Chain G_0 = J, ..., G_s = target of the pullback of target along J.

    Raises:
        ChainBroken: J is not the pullback of target along its own orbit
    """
    prec = resolve_precision(precision)
    tol = max(prec.scaled(1e-9), 1e-9) * spec.scale
    with prec.activate():
        mid = (prec.real(J[0]) + prec.real(J[1])) / 2
        orbit = _orbit(spec, mid, s)
        if _component_of([target], orbit[-1], 0.0) is None:
            raise ChainBroken("f^s(J) is not inside the target", s=s)
        spans = pullback_along(spec, (prec.real(target[0]), prec.real(target[1])), orbit, prec)
    first = spans[0]
    if abs(float(first[0]) - float(J[0])) > tol or abs(float(first[1]) - float(J[1])) > tol:
        raise ChainBroken(
            "J is not a component of the pullback",
            expected=[float(first[0]), float(first[1])],
            given=[float(J[0]), float(J[1])],
        )
    return _make_chain(spec, spans)


def _make_chain(spec: MapSpec, spans: Sequence[Span]) -> Chain:
    pieces = [create_interval(a, b) for a, b in spans]
    criticals = [c.location for c in spec.critical_points]
    flags = [any(p.a < c < p.b for c in criticals) for p in pieces]
    s = len(pieces) - 1
    return Chain(
        pieces=pieces,
        critical_steps=flags,
        order=sum(flags[:s]),
        intersection_multiplicity=_overlap_depth(pieces[:s]) if s else 1,
    )


def _overlap_depth(pieces: Sequence[Interval]) -> int:
    events = []
    for p in pieces:
        events.append((p.a, 1))
        events.append((p.b, -1))
    events.sort(key=lambda e: (e[0], e[1]))
    depth = best = 0
    for _, delta in events:
        depth += delta
        best = max(best, depth)
    return max(best, 1)


def return_structure(
    spec: MapSpec,
    base: Sequence[Span],
    horizon: int = 1000,
    samples: int = 2000,
    inside_only: bool = False,
    precision: Optional[Precision] = None,
) -> ReturnStructure:
    """
    Components of Dom(I) found from a dense sample of M (or of I).

    Each sample's first entry is pulled back to its domain; coverage is the
    fraction of samples whose orbit entered within horizon.
    """
    prec = resolve_precision(precision)
    tol = prec.endpoint_tolerance(spec.scale)
    lo, hi = spec.domain
    if inside_only:
        xs = np.concatenate([np.linspace(float(a), float(b), samples // max(len(base), 1) + 2)[1:-1] for a, b in base])
    else:
        xs = np.linspace(lo, hi, samples + 2)[1:-1]
    criticals = [c.location for c in spec.critical_points]
    domains: List[EntryDomain] = []
    entered = 0
    for x in xs:
        if any(float(d.interval.a) - tol <= x <= float(d.interval.b) + tol for d in domains):
            entered += 1
            continue
        try:
            k, (a, b) = first_entry(spec, base, float(x), horizon, precision=prec)
        except NoEntryWithinHorizon:
            continue
        entered += 1
        interval = create_interval(a, b)
        inside = _component_of(base, interval.midpoint, 0.0) is not None
        domains.append(
            EntryDomain(
                interval=interval,
                time=k,
                kind=EntryKind.RETURN if inside else EntryKind.ENTRY,
                central=any(interval.a < c < interval.b for c in criticals),
            )
        )
    domains.sort(key=lambda d: d.interval.a)
    return ReturnStructure(
        base=[create_interval(a, b) for a, b in base],
        domains=domains,
        coverage=entered / max(len(xs), 1),
        horizon=horizon,
    )


# Kneading theory and the Fibonacci parameter


def fibonacci_times(count: int) -> List[int]:
    """S_0, S_1, ... = 1, 2, 3, 5, 8, ..."""
    times = [1, 2]
    while len(times) < count:
        times.append(times[-1] + times[-2])
    return times[:count]


def kneading_symbol(y: Real, critical: Real) -> float:
    if y < critical:
        return 0.0
    if y > critical:
        return 1.0
    return 0.5


def kneading_sequence(step: Callable[[Real], Real], critical: Real, length: int) -> List[float]:
    """Symbols of f^n(c), n = 1..length: 0 left of c, 1 right, 0.5 at c"""
    symbols = []
    y = critical
    for _ in range(length):
        y = step(y)
        symbols.append(kneading_symbol(y, critical))
    return symbols


def twisted_compare(first: Sequence[float], second: Sequence[float]) -> int:
    """Order of two itineraries; each 0 in the common prefix reverses orientation"""
    flips = 0
    for a, b in zip(first, second):
        if a != b:
            sign = 1 if a > b else -1
            return -sign if flips % 2 else sign
        if a == 0.0:
            flips += 1
    return 0


def fibonacci_kneading(length: int) -> List[float]:
    """Target kneading word of the Fibonacci combinatorics"""
    times = fibonacci_times(64)
    nu = [0.0, 0.0]  # nu[0] unused
    for n in range(2, length + 1):
        k = max(i for i, s in enumerate(times) if s <= n)
        if times[k] == n:
            nu.append(1.0 - nu[n - times[k - 1]])
        else:
            nu.append(nu[n - times[k]])
    return nu[1 : length + 1]


def cutting_times(step: Callable[[Real], Real], critical: Real, length: int) -> List[int]:
    """Times n where the kneading word first disagrees with the shifted word"""
    word = kneading_sequence(step, critical, length)
    times = [1]
    for n in range(2, length + 1):
        prev = times[-1]
        if word[n - 1] != word[n - 1 - prev]:
            times.append(n)
    return times


def closest_return_times(step: Callable[[Real], Real], critical: Real, length: int) -> List[int]:
    """n with |f^n(c) - c| below every earlier |f^k(c) - c|"""
    times = []
    best = None
    y = critical
    for n in range(1, length + 1):
        y = step(y)
        distance = abs(y - critical)
        if best is None or distance < best:
            best = distance
            times.append(n)
    return times


def power_step(d: int, c: Real) -> Callable[[Real], Real]:
    return lambda x: x**d + c


def _compare_to_target(d: int, c: Real, target: Sequence[float]) -> int:
    y = mpmath.mpf(0) if isinstance(c, mpmath.mpf) else 0.0
    flips = 0
    for symbol in target:
        y = y**d + c
        s = kneading_symbol(y, 0)
        if s != symbol:
            sign = 1 if s > symbol else -1
            return -sign if flips % 2 else sign
        if s == 0.0:
            flips += 1
    return 0


def fibonacci_parameter(d: int, depth: int, precision: Optional[Precision] = None) -> Real:
    """
    Bisection on [c_*, 0] for x^d + c with the Fibonacci kneading prefix of
    length S_(depth+1) + 1.

    Raises:
        PrecisionExhausted: the prefix is not met within bits + 8 halvings
    """
    if d < 2 or d % 2:
        raise ValueError("degree must be even and >= 2")
    prec = precision or Precision(bits=256)
    length = fibonacci_times(depth + 2)[-1] + 1
    target = fibonacci_kneading(length)
    with prec.activate():
        lo = -mpmath.power(2, mpmath.mpf(1) / (d - 1)) if prec.extended else full_family_parameter(d)
        hi = prec.real(0)
        side_lo = _compare_to_target(d, lo, target)
        if side_lo == 0:
            return lo
        for step in range(prec.bisection_steps):
            mid = (lo + hi) / 2
            if mid == lo or mid == hi:
                break
            side = _compare_to_target(d, mid, target)
            if side == 0:
                logger.info("fibonacci_parameter_found", d=d, depth=depth, steps=step + 1)
                return mid
            if side == side_lo:
                lo = mid
            else:
                hi = mid
    raise PrecisionExhausted(
        "Fibonacci prefix not reached at this precision", d=d, depth=depth, bits=prec.bits
    )


def fibonacci_parameter_search(d: int, depth: int, precision: Optional[Precision] = None) -> FibonacciReport:
    """Fibonacci parameter of x^d + c with an independent closest-return check"""
    prec = precision or Precision(bits=256)
    c = fibonacci_parameter(d, depth, prec)
    length = fibonacci_times(depth + 2)[-1] + 1
    with prec.activate():
        returns = closest_return_times(power_step(d, c), prec.real(0), length)
        digits = mpmath.nstr(c, int(prec.bits * 0.301)) if prec.extended else repr(float(c))
    expected = fibonacci_times(depth + 1)
    return FibonacciReport(
        degree=d,
        depth=depth,
        parameter=float(c),
        parameter_digits=digits,
        closest_returns=returns,
        verified=returns[: depth + 1] == expected,
        bits=prec.bits,
    )


def verify_fibonacci(d: int, c: Real, depth: int, precision: Optional[Precision] = None) -> bool:
    """Closest returns of 0 under x^d + c start with the first depth + 1 Fibonacci times"""
    prec = resolve_precision(precision)
    length = fibonacci_times(depth + 2)[-1] + 1
    with prec.activate():
        returns = closest_return_times(power_step(d, prec.real(c)), prec.real(0), length)
    return returns[: depth + 1] == fibonacci_times(depth + 1)
