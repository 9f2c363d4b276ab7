"""
Data schemas for puzzlekit analyses.
This module defines the map definition format, every report record and the
experiment configuration using Pydantic models.
"""

from datetime import datetime, timezone
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

SCHEMA_VERSION = "1.0"


class Parity(str, Enum):
    """Parity of a critical order"""

    EVEN = "even"
    ODD = "odd"


class DomainKind(str, Enum):
    """Phase space of a map"""

    INTERVAL = "interval"
    CIRCLE = "circle"


class OrbitClass(str, Enum):
    """Multiplier classification of a periodic orbit"""

    ATTRACTING = "attracting"
    SUPERATTRACTING = "superattracting"
    PARABOLIC = "parabolic"
    REPELLING = "repelling"


class EntryKind(str, Enum):
    """Entry domain relative to its base set"""

    RETURN = "return"
    ENTRY = "entry"


class CascadeType(str, Enum):
    """Shape of the return map on a central cascade"""

    LOW = "low"
    HIGH = "high"
    MONOTONE = "monotone"


class RecurrenceKind(str, Enum):
    """Recurrence verdict for a critical point"""

    IN_BASIN = "in-basin"
    INFINITELY_RENORMALIZABLE = "infinitely-renormalizable"
    PERSISTENTLY_RECURRENT = "persistently-recurrent"
    RELUCTANTLY_RECURRENT = "reluctantly-recurrent"
    NON_RECURRENT = "non-recurrent"


class FitRegime(str, Enum):
    """Decay law preferred by a fit"""

    GEOMETRIC = "geometric"
    POWER_LAW = "power-law"


class Command(str, Enum):
    """Command line subcommands"""

    ANALYZE = "analyze"
    PARTITION = "partition"
    NEST = "nest"
    CASCADE = "cascade"
    ENHANCED_NEST = "enhanced-nest"
    DISK_PULLBACK = "disk-pullback"
    CONJUGATE = "conjugate"
    FIBONACCI = "fibonacci"
    REPORT = "report"


# Map definitions


class CriticalPointSpec(BaseModel):
    """Critical point as written in a map definition file"""

    x: Union[float, str]
    order: int = Field(..., ge=2)
    parity: Optional[Parity] = None


class ParabolicSpec(BaseModel):
    """Declared parabolic cycle"""

    point: Union[float, str]
    period: int = Field(1, ge=1)
    multiplicity: Optional[int] = Field(None, ge=1)


class PieceSpec(BaseModel):
    """One local form of a piecewise map"""

    lower: float
    upper: float
    expression: str = Field(..., min_length=1)

    @model_validator(mode="after")
    def check_bounds(self) -> "PieceSpec":
        if not self.lower < self.upper:
            raise ValueError("piece lower bound must be below upper bound")
        return self


class MapDefinition(BaseModel):
    """Contents of a map definition file"""

    schema_version: str = SCHEMA_VERSION
    name: str = "map"
    domain: Union[Tuple[float, float], DomainKind] = Field(...)
    expression: Optional[str] = None
    pieces: Optional[List[PieceSpec]] = None
    critical_points: List[CriticalPointSpec] = Field(default_factory=list)
    parabolic: List[ParabolicSpec] = Field(default_factory=list)
    kinks: List[float] = Field(default_factory=list)
    degree: int = Field(1, description="Degree of a circle lift")

    @field_validator("domain", mode="before")
    @classmethod
    def parse_domain(cls, value: Any) -> Any:
        if isinstance(value, dict):
            if value.get("kind") == DomainKind.CIRCLE.value:
                return DomainKind.CIRCLE
            return tuple(value["bounds"])
        return value

    @model_validator(mode="after")
    def check_form(self) -> "MapDefinition":
        if (self.expression is None) == (self.pieces is None):
            raise ValueError("exactly one of 'expression' or 'pieces' is required")
        if isinstance(self.domain, tuple) and not self.domain[0] < self.domain[1]:
            raise ValueError("domain must be an interval (a, b) with a < b")
        return self


# Geometry primitives


class Interval(BaseModel):
    """Open real interval (a, b)"""

    model_config = ConfigDict(frozen=True)

    a: float
    b: float

    @model_validator(mode="after")
    def check_order(self) -> "Interval":
        if self.a > self.b:
            raise ValueError("interval endpoints must satisfy a <= b")
        return self

    @property
    def length(self) -> float:
        return self.b - self.a

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.a + self.b)

    def contains(self, x: float, tol: float = 0.0) -> bool:
        return self.a + tol < x < self.b - tol

    def contains_interval(self, other: "Interval", tol: float = 0.0) -> bool:
        return self.a - tol <= other.a and other.b <= self.b + tol

    def disjoint_from(self, other: "Interval", tol: float = 0.0) -> bool:
        return other.a >= self.b - tol or self.a >= other.b - tol

    def as_tuple(self) -> Tuple[float, float]:
        return (self.a, self.b)


class CriticalPoint(BaseModel):
    """Critical point with integer order"""

    location: float
    order: int = Field(..., ge=2)
    parity: Parity
    expression: Optional[str] = None

    @model_validator(mode="before")
    @classmethod
    def infer_parity(cls, data: Any) -> Any:
        if isinstance(data, dict) and data.get("parity") is None and "order" in data:
            data = dict(data)
            data["parity"] = Parity.EVEN if int(data["order"]) % 2 == 0 else Parity.ODD
        return data

    @model_validator(mode="after")
    def check_parity(self) -> "CriticalPoint":
        expected = Parity.EVEN if self.order % 2 == 0 else Parity.ODD
        if self.parity != expected:
            raise ValueError(f"order {self.order} has parity {expected.value}")
        return self

    @property
    def is_even(self) -> bool:
        return self.parity == Parity.EVEN


class LocalFormReport(BaseModel):
    """Log-log slope check of a declared critical order"""

    location: float
    declared_order: int
    order_estimate: float
    residual: float
    passed: bool
    samples: int = Field(..., ge=2)


class DerivativeConsistencyReport(BaseModel):
    """Central-difference check of the first derivative"""

    fitted_exponent: Optional[float] = None
    passed: bool
    samples: int


class BranchCertificate(BaseModel):
    """Sign of Df on one monotone branch"""

    interval: Interval
    sign: int = Field(..., ge=-1, le=1)
    certified: bool
    lap: int = Field(0, ge=0)
    split: bool = False


# Orbits


class PeriodicOrbit(BaseModel):
    """Periodic cycle with multiplier classification"""

    points: List[float] = Field(..., min_length=1)
    period: int = Field(..., ge=1)
    multiplier: float
    orbit_class: OrbitClass
    parabolic_multiplicity: Optional[int] = Field(None, ge=1)
    parabolic_sign: Optional[int] = Field(None, ge=-1, le=1)
    borderline: bool = False

    @model_validator(mode="after")
    def check_parabolic_fields(self) -> "PeriodicOrbit":
        if self.parabolic_multiplicity is not None and self.orbit_class != OrbitClass.PARABOLIC:
            raise ValueError("parabolic multiplicity is only defined for parabolic orbits")
        if len(self.points) != self.period:
            raise ValueError("an orbit lists exactly one point per step of its period")
        return self

    @property
    def is_attracting(self) -> bool:
        return self.orbit_class in (OrbitClass.ATTRACTING, OrbitClass.SUPERATTRACTING)


class EscapeRateFit(BaseModel):
    """Power-law fit of a backward orbit converging to a parabolic point"""

    point: float
    sequence: List[float]
    fitted_exponent: float
    r_squared: float
    domain_exponent: float
    domain_r_squared: float
    fundamental_domains: List[float]
    degree_estimate: int = Field(..., ge=1)


class LengthSumReport(BaseModel):
    """Partial sums of powered lengths with a Cauchy tail check"""

    exponent: float
    total: float
    tail: float
    cauchy: bool
    terms: int
    hypotheses: Dict[str, str] = Field(default_factory=dict)


class OrderEdge(BaseModel):
    """Evidence that one critical point accumulates on another"""

    source: int
    target: int
    hit: bool
    min_distance: float


class PartialOrderReport(BaseModel):
    """Critical-point order graph built from finite orbits"""

    critical_points: List[float]
    edges: List[OrderEdge]
    components: List[List[int]]
    horizon: int
    radius_levels: int
    horizon_limited: bool = True


# Puzzle


class AdmissibleSet(BaseModel):
    """Finite forward-invariant set generating the puzzle"""

    points: List[float]
    image_index: List[int]
    domain_boundary: Tuple[float, float]
    sources: Dict[str, List[float]] = Field(default_factory=dict)
    pc_disjoint: bool = True

    @model_validator(mode="after")
    def check_sorted(self) -> "AdmissibleSet":
        if any(b <= a for a, b in zip(self.points, self.points[1:])):
            raise ValueError("admissible points must be strictly increasing")
        if len(self.image_index) != len(self.points):
            raise ValueError("one image index per admissible point")
        return self

    @property
    def cut_points(self) -> List[float]:
        lo, hi = self.domain_boundary
        return sorted({lo, hi, *self.points})


class PuzzlePiece(BaseModel):
    """Component of a pullback of a partition component"""

    interval: Interval
    depth: int = Field(..., ge=0)
    address: List[int]
    target: int = Field(..., ge=0)

    @model_validator(mode="after")
    def check_address(self) -> "PuzzlePiece":
        if len(self.address) != self.depth:
            raise ValueError("address length equals depth")
        return self


class PartitionLevel(BaseModel):
    """All pieces of one depth"""

    depth: int
    pieces: List[Dict[str, Any]]


class PartitionTree(BaseModel):
    """Export format for partition trees"""

    admissible: List[float]
    levels: List[PartitionLevel]


class Itinerary(BaseModel):
    """Partition symbols along an orbit"""

    symbols: List[int]
    truncated: bool = False
    hit_step: Optional[int] = None


class Chain(BaseModel):
    """Pullback sequence G_0, ..., G_s of an interval"""

    pieces: List[Interval] = Field(..., min_length=1)
    critical_steps: List[bool]
    order: int = Field(..., ge=0)
    intersection_multiplicity: int = Field(1, ge=1)

    @model_validator(mode="after")
    def check_order(self) -> "Chain":
        if self.order > max(len(self.pieces) - 1, 0):
            raise ValueError("chain order cannot exceed its length")
        return self

    @property
    def length(self) -> int:
        return len(self.pieces) - 1


class EntryDomain(BaseModel):
    """Component of the first entry domain"""

    interval: Interval
    time: int = Field(..., ge=0)
    kind: EntryKind
    central: bool = False


class ReturnStructure(BaseModel):
    """Entry and return domains of a nice set"""

    base: List[Interval]
    domains: List[EntryDomain]
    coverage: float = Field(..., ge=0.0, le=1.0)
    horizon: int


class FibonacciReport(BaseModel):
    """Result of a Fibonacci parameter search"""

    degree: int
    depth: int
    parameter: float
    parameter_digits: str
    closest_returns: List[int]
    verified: bool
    bits: int


# Nests


class NestRecord(BaseModel):
    """One level of a principal nest"""

    level: int = Field(..., ge=0)
    piece: Interval
    return_time: int = Field(..., ge=1)
    child: Optional[Interval] = None
    cascade_id: Optional[int] = None
    terminating: bool = False
    central: bool = False
    non_central: bool = False


class CascadeRecord(BaseModel):
    """Maximal run of central returns with equal return time"""

    cascade_id: int
    start_level: int
    length: int = Field(..., ge=1)
    return_time: int = Field(..., ge=1)
    pieces: List[Interval]
    cascade_type: CascadeType
    maximal: bool
    maximal_witnessed: bool = True
    escape_times: Dict[str, int] = Field(default_factory=dict)
    fixed_points: Dict[str, float] = Field(default_factory=dict)

    @model_validator(mode="after")
    def check_pieces(self) -> "CascadeRecord":
        if len(self.pieces) != self.length + 2:
            raise ValueError("a cascade of length N lists pieces Z^0 .. Z^(N+1)")
        return self


class RenormalizationWitness(BaseModel):
    """Periodic interval found from a terminating nest"""

    period: int = Field(..., ge=1)
    interval: Interval
    disjoint_interiors: bool
    boundary_residual: float


class GoodNestStep(BaseModel):
    """Passage of one critical point from V^i to V^(i+1)"""

    critical_index: int
    v_piece: Interval
    w_piece: Interval
    escape_time: Optional[int] = None
    landing_time: Optional[int] = None
    landing_critical: Optional[int] = None
    chain_order: Optional[int] = None
    collapsed: bool = False


class GoodNestLevel(BaseModel):
    """One level of a good nest"""

    level: int
    steps: List[GoodNestStep]
    cascade_runs: int = 0
    cascade_bound_ok: bool = True


class GoodNest(BaseModel):
    """Alternating nest V^0 > W^0 > V^1 > ..."""

    levels: List[GoodNestLevel]
    truncated: bool = False
    reason: Optional[str] = None


class EnhancedNestStep(BaseModel):
    """One piece of the enhanced nest above a cascade"""

    index: int
    piece: Interval
    pullback_time: Optional[int] = None
    return_time: int
    rule: str
    gamma_steps: int = Field(default=0, ge=0)
    gamma_ties: bool = False
    chain_order: Optional[int] = Field(default=None, ge=0)


class EnhancedNest(BaseModel):
    """Enhanced nest above a long central cascade"""

    steps: List[EnhancedNestStep]
    e_piece: Optional[Interval] = None
    e_close: bool = False
    cascade_length: int
    max_chain_order: int = 0
    doubling_ok: bool
    return_bound_ok: bool

    @property
    def relations_hold(self) -> bool:
        return self.doubling_ok and self.return_bound_ok


class RecurrenceVerdict(BaseModel):
    """Recurrence class of one critical point"""

    critical_index: int
    location: float
    kind: RecurrenceKind
    children_counts: List[int] = Field(default_factory=list)
    renormalization_periods: List[int] = Field(default_factory=list)


class RecurrenceClass(BaseModel):
    """Recurrence verdicts and the Omega decomposition"""

    verdicts: List[RecurrenceVerdict]
    omega0: List[int]
    omega1: List[int]
    omega1_minimal: List[int]
    omega2: List[int]
    horizon: int
    children_threshold: int


# Geometry


class CrossRatioReport(BaseModel):
    """Cross-ratio distortion of an iterate along a chain"""

    cross_ratio: float
    distortion: float
    intersection_multiplicity: int
    max_length: float
    lower_bound: float
    steps: int
    negative_schwarzian: Optional[bool] = None


class AdmissibleMetrics(BaseModel):
    """Gap, Space and centrality measurements of an admissible neighbourhood"""

    gap: float
    space: float
    cen1: float
    cen2: float
    domains: int
    c1: List[int] = Field(default_factory=list)
    c2: List[int] = Field(default_factory=list)
    horizon: int


class YoccozProfile(BaseModel):
    """Fundamental-domain lengths along an almost parabolic map"""

    lengths: List[float]
    normalized: List[float]
    base_length: float
    constant: float
    spread: float
    sigma: float
    window: Tuple[int, int]
    almost_parabolic: bool
    one_sided: bool = False


class NicenessReport(BaseModel):
    """rho-nice modulus and bounded geometry"""

    rho_nice: float
    bounded_geometry: float
    samples: int


# Complex traces


class PoincareDisk(BaseModel):
    """Symmetric lens D_theta(I) bounded by two circular arcs through a and b"""

    model_config = ConfigDict(frozen=True)

    base: Interval
    theta: float = Field(..., gt=0.0, lt=3.141592653589794)
    upper_center: Tuple[float, float]
    lower_center: Tuple[float, float]
    radius: float = Field(..., gt=0.0)


class PowerPullbackReport(BaseModel):
    """Angle control of z -> z^ell"""

    ell: int = Field(..., ge=2)
    K: float = Field(..., gt=0.0)
    theta: float
    theta_prime: float
    lambda_est: float
    theta_inner: float
    split_constant: Optional[float] = None
    samples: int


class DiskTrace(BaseModel):
    """Traced boundary of a pulled-back Poincare disk"""

    vertices: List[Tuple[float, float]]
    source: PoincareDisk
    word: List[int]
    base: Interval
    theta_prime: float
    angle_losses: List[float]
    closure_residual: float
    quasidisk_ratio: float
    schwarz_constant: Optional[float] = None


# Conjugacy


class ConjugacyGrid(BaseModel):
    """Strictly monotone point map matched by branch words"""

    xs: List[float]
    ys: List[float]
    depth: int
    orientation: int = Field(1, ge=-1, le=1)
    provenance: List[int] = Field(default_factory=list)
    residual: float = 0.0
    dropped: int = 0

    @model_validator(mode="after")
    def check_monotone(self) -> "ConjugacyGrid":
        if len(self.xs) != len(self.ys):
            raise ValueError("xs and ys must have equal length")
        if any(b <= a for a, b in zip(self.xs, self.xs[1:])):
            raise ValueError("grid abscissae must be strictly increasing")
        return self


class ScaleKappa(BaseModel):
    """Quasisymmetric ratio at one scale"""

    scale: float
    kappa: float = Field(..., ge=1.0)
    x_at_max: Optional[float] = None


class QsReport(BaseModel):
    """Quasisymmetric and Holder distortion of a grid"""

    kappa_max: float = Field(..., ge=1.0)
    per_scale: List[ScaleKappa]
    near_parabolic: List[ScaleKappa] = Field(default_factory=list)
    holder_exponent: float
    extreme_triple: Optional[Tuple[float, float, float]] = None


class EquivalenceMismatch(BaseModel):
    """First disagreement between two itineraries"""

    critical_index: int
    step: int
    symbol_f: Optional[int]
    symbol_g: Optional[int]


class EquivalenceReport(BaseModel):
    """Combinatorial equivalence verdict"""

    equivalent: bool
    depth: int
    mismatch: Optional[EquivalenceMismatch] = None


class RegimeFit(BaseModel):
    """Geometric against power-law fit of closest-return distances"""

    degree: int
    distances: List[float]
    geometric_r_squared: float
    power_r_squared: float
    winner: FitRegime
    strictly_decreasing: bool


class OrderMismatchReport(BaseModel):
    """Closest-return decay for two critical orders"""

    depth: int
    fits: List[RegimeFit]
    truncated: bool = False


# Configuration and reports


class ExperimentConfig(BaseModel):
    """Everything that determines a run; echoed into every report"""

    schema_version: str = SCHEMA_VERSION
    map_files: List[str] = Field(default_factory=list)
    precision_bits: int = Field(53, ge=53)
    depth: int = Field(8, ge=0)
    depth_cap: Optional[int] = Field(None, ge=1)
    horizon: int = Field(10_000, ge=1)
    children_horizon: int = Field(4_000, ge=1)
    children_threshold: int = Field(64, ge=1)
    period_max: int = Field(4, ge=1)
    grid_density: int = Field(4_000, ge=16)
    sigma: float = Field(1e-3, gt=0.0)
    samples: int = Field(512, ge=8)
    workers: int = Field(1, ge=1)
    output: Optional[str] = None
    csv: bool = False
    plot_data: bool = False


class ErrorData(BaseModel):
    """JSON error object"""

    timestamp: datetime = Field(default_factory=lambda: datetime.now(timezone.utc))
    error_type: str = Field(..., min_length=1)
    error_message: str = Field(..., min_length=1)
    context: Dict[str, Any] = Field(default_factory=dict)


class JobResult(BaseModel):
    """Outcome of one runner job"""

    index: int = Field(..., ge=0)
    name: str
    ok: bool
    result: Any = None
    error: Optional[ErrorData] = None
    elapsed_ms: int = Field(0, ge=0)


class Report(BaseModel):
    """Envelope written by every command"""

    schema_version: str = SCHEMA_VERSION
    command: Command
    config: ExperimentConfig
    result: Dict[str, Any]
    generated_at: datetime = Field(default_factory=lambda: datetime.now(timezone.utc))


def create_interval(a: Any, b: Any) -> Interval:
    """Interval from two reals in either order; extended reals are rounded"""
    lo, hi = float(a), float(b)
    if lo > hi:
        lo, hi = hi, lo
    return Interval(a=lo, b=hi)


def create_critical_point(location: Any, order: int, expression: Optional[str] = None) -> CriticalPoint:
    """Critical point with parity derived from its order"""
    return CriticalPoint(location=float(location), order=order, expression=expression)


def create_error_data(
    error_type: str,
    error_message: str,
    context: Optional[Dict[str, Any]] = None,
) -> ErrorData:
    """Create an error record"""
    return ErrorData(
        error_type=error_type,
        error_message=error_message or error_type,
        context={k: _jsonable(v) for k, v in (context or {}).items()},
    )


def create_report(command: Command, config: ExperimentConfig, result: Dict[str, Any]) -> Report:
    """Wrap a result with the configuration that produced it"""
    return Report(command=command, config=config, result=result)


def _jsonable(value: Any) -> Any:
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    try:
        return float(value)
    except (TypeError, ValueError):
        return str(value)


def generate_report_schemas() -> Dict[str, Any]:
    """Generate JSON schemas for the definition file and all reports"""
    return {
        "schema_version": SCHEMA_VERSION,
        "map_definition": MapDefinition.model_json_schema(),
        "experiment_config": ExperimentConfig.model_json_schema(),
        "report": Report.model_json_schema(),
        "error": ErrorData.model_json_schema(),
        "job_result": JobResult.model_json_schema(),
        "commands": {command.value: command.value for command in Command},
        "results": {
            "periodic_orbit": PeriodicOrbit.model_json_schema(),
            "escape_rate": EscapeRateFit.model_json_schema(),
            "partial_order": PartialOrderReport.model_json_schema(),
            "admissible_set": AdmissibleSet.model_json_schema(),
            "partition_tree": PartitionTree.model_json_schema(),
            "chain": Chain.model_json_schema(),
            "return_structure": ReturnStructure.model_json_schema(),
            "fibonacci": FibonacciReport.model_json_schema(),
            "nest_record": NestRecord.model_json_schema(),
            "cascade": CascadeRecord.model_json_schema(),
            "good_nest": GoodNest.model_json_schema(),
            "enhanced_nest": EnhancedNest.model_json_schema(),
            "recurrence": RecurrenceClass.model_json_schema(),
            "cross_ratio": CrossRatioReport.model_json_schema(),
            "admissible_metrics": AdmissibleMetrics.model_json_schema(),
            "yoccoz_profile": YoccozProfile.model_json_schema(),
            "niceness": NicenessReport.model_json_schema(),
            "power_pullback": PowerPullbackReport.model_json_schema(),
            "disk_trace": DiskTrace.model_json_schema(),
            "conjugacy_grid": ConjugacyGrid.model_json_schema(),
            "qs_report": QsReport.model_json_schema(),
            "equivalence": EquivalenceReport.model_json_schema(),
            "order_mismatch": OrderMismatchReport.model_json_schema(),
        },
    }


if __name__ == "__main__":
    import json

    # Generate and print schemas
    schemas = generate_report_schemas()
    print(json.dumps(schemas, indent=2))
