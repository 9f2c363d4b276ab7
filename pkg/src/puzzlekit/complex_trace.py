"""
Poincare disks and numerically traced complex pullbacks of real polynomials.

A Poincare disk D_theta(I) is the set of z with angle(a, z, b) > theta, bounded
by two circular arcs through the ends of I = (a, b). Larger angles give thinner
lenses.
"""

import math
from typing import List, Optional, Sequence, Tuple

import numpy as np
import structlog
from tenacity import Retrying, retry_if_exception_type, stop_after_attempt

from .decorators import track_analysis
from .errors import CriticalValueOnBoundary, DegenerateConfiguration, TraceBroken
from .maps import MapSpec
from .puzzle import Span
from .schemas import Chain, DiskTrace, Interval, PoincareDisk, PowerPullbackReport, create_interval

logger = structlog.get_logger(__name__)

NEWTON_ITERATIONS = 12
MAX_SUBDIVISIONS = 12
CLOSURE_TOLERANCE = 1e-9
QUASIDISK_VERTICES = 256
THETA_JITTER = 1e-3


def disk(I: Span, theta: float) -> PoincareDisk:
    """D_theta(I): arcs of radius h/sin(theta) centred at (m, +-h cot(theta))"""
    a, b = float(I[0]), float(I[1])
    if not 0.0 < theta < math.pi:
        raise DegenerateConfiguration("disk angle must lie in (0, pi)", theta=theta)
    if not b > a:
        raise DegenerateConfiguration("disk base must have positive length", base=[a, b])
    m, h = 0.5 * (a + b), 0.5 * (b - a)
    offset = h / math.tan(theta)
    return PoincareDisk(
        base=create_interval(a, b),
        theta=theta,
        upper_center=(m, offset),
        lower_center=(m, -offset),
        radius=h / math.sin(theta),
    )


def vertex_angles(z: np.ndarray, base: Span) -> np.ndarray:
    """angle(a, z, b) in [0, pi]: pi on the open base, 0 on the real line outside it"""
    z = np.asarray(z, dtype=complex)
    a, b = float(base[0]), float(base[1])
    return np.abs(np.angle((a - z) / (b - z)))


def disk_contains(D: PoincareDisk, z: np.ndarray, tol: float = 0.0) -> np.ndarray:
    """Membership in the open disk, relaxed by tol radians"""
    return vertex_angles(z, D.base.as_tuple()) > D.theta - tol


def disk_boundary(D: PoincareDisk, samples: int = 400) -> np.ndarray:
    """
    Counter-clockwise polyline of the boundary starting at b: upper arc to a,
    then the mirrored lower arc back. Vertex 0 is b and vertex samples // 2 is a,
    both exactly real.
    """
    half = max(samples // 2, 2)
    a, b = D.base.a, D.base.b
    cx, cy = D.upper_center
    start = math.atan2(-cy, b - cx)
    sweep = 2.0 * (math.pi - D.theta)
    t = start + sweep * np.arange(half + 1) / half
    upper = (cx + D.radius * np.cos(t)) + 1j * (cy + D.radius * np.sin(t))
    upper[0], upper[-1] = complex(b, 0.0), complex(a, 0.0)
    lower = np.conj(upper[1:-1])[::-1]
    return np.concatenate([upper, lower])


def containing_angle(vertices: np.ndarray, base: Span, tol: float = 1e-12) -> float:
    """Largest theta with every vertex in the closure of D_theta(base)"""
    angles = _interior_angles(vertices, base, tol)
    return float(angles.min()) if len(angles) else math.pi


def _interior_angles(vertices: np.ndarray, base: Span, tol: float) -> np.ndarray:
    a, b = float(base[0]), float(base[1])
    scale = tol * max(b - a, 1.0)
    far = (np.abs(vertices - a) > scale) & (np.abs(vertices - b) > scale)
    return vertex_angles(vertices[far], base)


# Power maps


def _ray_radius(D: PoincareDisk, directions: np.ndarray) -> np.ndarray:
    """Distance from 0 to the boundary along each direction; 0 must lie inside the base"""
    u = np.exp(1j * directions)
    cx = D.upper_center[0]
    cy = np.where(np.sin(directions) >= 0, D.upper_center[1], D.lower_center[1])
    proj = u.real * cx + u.imag * cy
    return proj + np.sqrt(proj**2 - (cx**2 + cy**2) + D.radius**2)


def power_preimage_boundary(ell: int, target: PoincareDisk, samples: int) -> np.ndarray:
    """Boundary of the component of z -> z^ell pulled back from a disk around 0"""
    if not target.base.a < 0.0 < target.base.b:
        raise DegenerateConfiguration("power pullback needs 0 inside the base", base=target.base.as_tuple())
    phi = 2.0 * math.pi * np.arange(samples) / samples
    rho = _ray_radius(target, ell * phi) ** (1.0 / ell)
    vertices = rho * np.exp(1j * phi)
    residual = float(np.max(np.abs(_ray_radius(target, np.angle(vertices**ell)) - np.abs(vertices) ** ell)))
    if not np.all(np.isfinite(vertices)) or residual > 1e-8 * target.radius:
        raise TraceBroken("power preimage does not close", ell=ell, residual=residual)
    return vertices


@track_analysis()
def power_pullback(ell: int, K: float, theta: float, samples: int = 10_000) -> PowerPullbackReport:
    """
    Angle control of z -> z^ell.

    The target is D_theta(-K, 1) for even ell and D_theta(-K^ell, 1) for odd ell;
    the base of the preimage is (-1, 1) or (-K, 1) respectively. theta_prime is
    the largest angle whose disk contains the preimage, theta_inner the smallest
    whose disk is contained in it. When some boundary vertex escapes D_theta of
    the base, split_constant is the radius C of the round disk D_{pi/2}(-C, C)
    covering those vertices.

    Raises:
        TraceBroken: the traced boundary does not close
    """
    if ell < 2:
        raise DegenerateConfiguration("power must be at least 2", ell=ell)
    if ell % 2 == 0:
        target_base, base = (-K, 1.0), (-1.0, 1.0)
    else:
        target_base, base = (-(K**ell), 1.0), (-K, 1.0)
    target = disk(target_base, theta)
    vertices = power_preimage_boundary(ell, target, samples)
    angles = _interior_angles(vertices, base, 1e-12)
    theta_prime = float(angles.min())
    outside = vertices[vertex_angles(vertices, base) < theta - 1e-12]
    split = float(np.max(np.abs(outside))) if len(outside) else None
    report = PowerPullbackReport(
        ell=ell,
        K=K,
        theta=theta,
        theta_prime=theta_prime,
        lambda_est=theta_prime / theta,
        theta_inner=float(angles.max()),
        split_constant=split,
        samples=samples,
    )
    logger.debug("power_pullback", ell=ell, K=K, theta=theta, lambda_est=report.lambda_est)
    return report


# Polynomial chains


def _critical_values(spec: MapSpec) -> np.ndarray:
    coefficients = spec.polynomial_coefficients
    if coefficients is None or len(coefficients) < 3:
        return np.array([], dtype=complex)
    points = np.roots(np.polyder(coefficients))
    return np.polyval(coefficients, points)


def _newton(spec: MapSpec, z: complex, w: complex, tol: float) -> Optional[complex]:
    for _ in range(NEWTON_ITERATIONS):
        slope = spec.complex_derivative(z)
        if abs(slope) < 1e-300:
            return None
        step = (spec.complex_value(z) - w) / slope
        z = z - step
        if abs(step) <= tol:
            return complex(z)
    return None


def _continue(spec: MapSpec, z: complex, w_from: complex, w_to: complex, tol: float) -> complex:
    """Follow the root of f(z) = w from w_from to w_to with predictor-corrector substeps"""
    for level in range(MAX_SUBDIVISIONS):
        pieces = 2**level
        current, ok = z, True
        for k in range(1, pieces + 1):
            w_prev = w_from + (w_to - w_from) * (k - 1) / pieces
            w_next = w_from + (w_to - w_from) * k / pieces
            slope = spec.complex_derivative(current)
            if abs(slope) < tol:
                raise CriticalValueOnBoundary("trace runs through a critical point", z=complex(current))
            predicted = current + (w_next - w_prev) / slope
            corrected = _newton(spec, predicted, w_next, tol)
            if corrected is None or abs(corrected - predicted) > 0.25 * abs(predicted - current) + 10 * tol:
                ok = False
                break
            current = corrected
        if ok:
            return current
    raise TraceBroken("continuation step did not converge", z=complex(z), w=complex(w_to))


def _real_start(spec: MapSpec, polyline: np.ndarray, piece: Interval, tol: float) -> Tuple[int, float]:
    """Real vertex of the polyline with a real preimage nearest the piece"""
    best: Optional[Tuple[float, int, float]] = None
    for index in np.flatnonzero(np.abs(polyline.imag) <= tol):
        for _, root in spec.preimages(float(polyline[index].real)):
            x = float(root)
            distance = max(piece.a - x, x - piece.b, 0.0)
            if best is None or distance < best[0]:
                best = (distance, int(index), x)
    if best is None:
        raise TraceBroken("no real crossing of the curve has a real preimage", piece=piece.as_tuple())
    return best[1], best[2]


def _pull_back_polyline(spec: MapSpec, polyline: np.ndarray, piece: Interval, tol: float) -> np.ndarray:
    """Closed preimage curve of a closed polyline around the component of the piece"""
    start, x0 = _real_start(spec, polyline, piece, tol)
    ring = np.roll(polyline, -start)
    ring[0] = complex(ring[0].real, 0.0)
    n = len(ring)
    cover = max(len(spec.polynomial_coefficients) - 1, 1)  # type: ignore[arg-type]
    z = complex(x0, 0.0)
    vertices = [z]
    for k in range(1, cover * n + 1):
        z = _continue(spec, z, ring[(k - 1) % n], ring[k % n], tol)
        if k % n == 0:
            if abs(z - x0) <= CLOSURE_TOLERANCE * max(piece.length, tol):
                return np.array(vertices)
            logger.debug("trace_cover_pass", passes=k // n)
        vertices.append(z)
    raise TraceBroken("pulled-back curve does not close", piece=piece.as_tuple(), passes=cover)


def _real_extent(vertices: np.ndarray, tol: float) -> Tuple[float, float]:
    real = vertices[np.abs(vertices.imag) <= tol].real
    if len(real) < 2:
        raise TraceBroken("traced curve does not cross the real line twice")
    return float(real.min()), float(real.max())


def quasidisk_ratio(vertices: np.ndarray, max_vertices: int = QUASIDISK_VERTICES) -> float:
    """
    max over vertex pairs of min(diam of the two arcs) / |z_j - z_k|, measured
    from z_j as the furthest arc vertex.
    """
    step = max(len(vertices) // max_vertices, 1)
    z = np.asarray(vertices[::step])
    n = len(z)
    worst = 1.0
    for j in range(n):
        distances = np.abs(np.roll(z, -j) - z[j])
        forward = np.maximum.accumulate(distances)
        backward = np.maximum.accumulate(distances[::-1])[::-1]
        with np.errstate(divide="ignore", invalid="ignore"):
            ratios = np.minimum(forward[1:], backward[1:]) / distances[1:]
        finite = ratios[np.isfinite(ratios)]
        if len(finite):
            worst = max(worst, float(finite.max()))
    return worst


def _trace(
    spec: MapSpec, target: PoincareDisk, chain: Chain, samples: int, widen: float
) -> DiskTrace:
    pieces = chain.pieces
    last = pieces[-1]
    tol_base = 1e-9 * max(last.length, 1e-300)
    if abs(target.base.a - last.a) > tol_base or abs(target.base.b - last.b) > tol_base:
        raise DegenerateConfiguration(
            "target disk must be based on the last chain interval",
            base=target.base.as_tuple(),
            last=last.as_tuple(),
        )
    polyline = disk_boundary(target, samples)
    diameter = 2.0 * (target.radius if target.theta <= math.pi / 2 else 0.5 * target.base.length)
    values = _critical_values(spec)
    if len(values):
        gap = np.min(np.abs(polyline[:, None] - values[None, :]))
        if gap <= 1e-9 * diameter:
            raise CriticalValueOnBoundary("target boundary passes through a critical value", gap=float(gap))

    word: List[int] = []
    losses: List[float] = []
    ratios: List[float] = []
    theta_level = target.theta
    tol = 1e-12 * spec.scale
    for i in range(chain.length - 1, -1, -1):
        previous = polyline
        polyline = _pull_back_polyline(spec, polyline, pieces[i], tol)
        word.append(spec.lap_index(pieces[i].midpoint))
        extent = _real_extent(polyline, 1e-10 * spec.scale)
        angle = containing_angle(polyline, extent)
        losses.append(theta_level - angle)
        if not chain.critical_steps[i]:
            base_length = float(np.ptp(previous.real[np.abs(previous.imag) <= 1e-10 * spec.scale]))
            spread = float(np.max(np.abs(previous - previous.mean())) * 2.0)
            if base_length > 0 and spread > 0 and losses[-1] > 0:
                ratios.append(losses[-1] / (base_length * spread))
        theta_level = angle
    word.reverse()
    losses.reverse()

    lo, hi = _real_extent(polyline, 1e-10 * spec.scale)
    pad = 0.5 * widen * (hi - lo)
    base = (lo - pad, hi + pad)
    closure = _closure_residual(spec, polyline, disk_boundary(target, samples), chain.length)
    return DiskTrace(
        vertices=[(float(z.real), float(z.imag)) for z in polyline],
        source=target,
        word=word,
        base=create_interval(*base),
        theta_prime=containing_angle(polyline, base),
        angle_losses=losses,
        closure_residual=closure / diameter,
        quasidisk_ratio=quasidisk_ratio(polyline),
        schwarz_constant=max(ratios) if ratios else None,
    )


def _closure_residual(spec: MapSpec, vertices: np.ndarray, boundary: np.ndarray, s: int) -> float:
    images = np.asarray(vertices, dtype=complex)
    for _ in range(s):
        images = spec.complex_value(images)
    # distance to the boundary polyline through its vertices
    return float(np.max(np.min(np.abs(images[:, None] - boundary[None, :]), axis=1))) if s else 0.0


@track_analysis(extract_context=lambda a, k, r: {"steps": len(r.word)})
def chain_disk_pullback(
    spec: MapSpec,
    target: PoincareDisk,
    chain: Chain,
    samples: int = 400,
    widen: float = 0.0,
) -> DiskTrace:
    """
    Trace the boundary of Comp_{G_0} f^-s(D) by Newton continuation from real
    crossings, one chain step at a time.

    theta_prime is measured over the real trace of the pullback widened by
    ``widen`` of its length. A critical value on the traced boundary is retried
    twice with a slightly larger angle before it surfaces.

    Raises:
        CriticalValueOnBoundary: every attempt met a critical value
        TraceBroken: continuation failed or the curve did not close
    """
    if not spec.is_polynomial:
        raise DegenerateConfiguration("complex tracing needs a polynomial map", name=spec.name)
    theta = target.theta
    for attempt in Retrying(
        stop=stop_after_attempt(3),
        retry=retry_if_exception_type(CriticalValueOnBoundary),
        reraise=True,
    ):
        with attempt:
            number = attempt.retry_state.attempt_number
            if number > 1:
                theta = min(target.theta * (1.0 + THETA_JITTER * (number - 1)), math.pi - 1e-9)
                logger.warning("trace_retry", attempt=number, theta=theta)
            trace = _trace(spec, disk(target.base.as_tuple(), theta), chain, samples, widen)
    logger.info(
        "disk_pullback",
        steps=chain.length,
        theta=theta,
        theta_prime=trace.theta_prime,
        vertices=len(trace.vertices),
    )
    return trace


def is_symmetric(trace: DiskTrace, tol: float = 1e-10) -> bool:
    """Vertex k is the conjugate of vertex -k"""
    z = np.array([complex(x, y) for x, y in trace.vertices])
    mirrored = np.conj(np.roll(z[::-1], 1))
    scale = max(float(np.max(np.abs(z))), 1.0)
    return bool(np.max(np.abs(z - mirrored)) <= tol * scale)


def trace_polylines(trace: DiskTrace) -> List[Sequence[float]]:
    """Plot-ready closed polyline [x, y] rows"""
    rows = [list(v) for v in trace.vertices]
    return rows + rows[:1]
