"""
Command line driver: one subcommand per analysis, JSON reports on stdout.

Exit codes: 0 success, 1 analysis error (JSON error object printed), 2 bad
configuration or map definition.
"""

import argparse
import asyncio
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, NamedTuple, Optional, Sequence

import numpy as np
import structlog
from pydantic import ValidationError

from .complex_trace import chain_disk_pullback, disk, power_pullback, trace_polylines
from .conjugacy import build_conjugacy, order_mismatch_experiment, qs_constant
from .errors import CascadeNotFound, ConfigurationError, NotComparable, PuzzlekitError
from .families import create_power_map
from .geometry import yoccoz_profile
from .maps import MapSpec, certify_monotone_branches, load_map
from .nests import (
    annotate_cascades,
    classify_recurrence,
    critical_start_piece,
    detect_cascades,
    enhanced_cascade_nest,
    interval_image,
    principal_nest,
)
from .orbits import find_periodic_orbits, orbit_table_csv, partial_order
from .precision import Precision, default_precision
from .puzzle import build_starting_partition, chain_of, fibonacci_parameter_search, partition_tree
from .runner import AnalysisRunner, to_jsonable
from .schemas import Command, ExperimentConfig, create_error_data, create_report, generate_report_schemas

logger = structlog.get_logger(__name__)

LOG_LEVEL_ENV_VAR = "PUZZLEKIT_LOG_LEVEL"


class CommandOutput(NamedTuple):
    result: Dict[str, Any]
    csv: Optional[str] = None
    plot: Optional[Any] = None


def configure_logging(level: str) -> None:
    """Console renderer on stderr so stdout carries data only"""
    numeric = logging.getLevelName(level.upper())
    if not isinstance(numeric, int):
        raise ConfigurationError("unknown log level", level=level)
    structlog.configure(
        processors=[
            structlog.processors.add_log_level,
            structlog.processors.TimeStamper(fmt="iso"),
            structlog.dev.ConsoleRenderer(colors=False),
        ],
        wrapper_class=structlog.make_filtering_bound_logger(numeric),
        logger_factory=structlog.PrintLoggerFactory(file=sys.stderr),
        cache_logger_on_first_use=False,
    )


def _csv(header: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buffer.getvalue()


def _map(path: str) -> MapSpec:
    return load_map(path)


# Command handlers


def run_analyze(args: argparse.Namespace, config: ExperimentConfig, prec: Precision) -> CommandOutput:
    spec = _map(args.map)
    orbits = find_periodic_orbits(spec, config.period_max, config.grid_density, prec)
    admissible = build_starting_partition(spec, config.period_max, config.grid_density, orbits, prec)
    order = partial_order(spec, config.horizon, precision=prec)
    recurrence = classify_recurrence(
        spec,
        horizon=config.horizon,
        children_horizon=config.children_horizon,
        children_threshold=config.children_threshold,
        period_max=config.period_max,
        precision=prec,
    )
    branches = certify_monotone_branches(spec, precision=prec)
    result = {
        "map": spec.name,
        "branches": [b.model_dump(mode="json") for b in branches],
        "orbits": [o.model_dump(mode="json") for o in orbits],
        "admissible": admissible.model_dump(mode="json"),
        "partial_order": order.model_dump(mode="json"),
        "recurrence": recurrence.model_dump(mode="json"),
    }
    return CommandOutput(result, csv=orbit_table_csv(orbits))


def run_partition(args: argparse.Namespace, config: ExperimentConfig, prec: Precision) -> CommandOutput:
    spec = _map(args.map)
    admissible = build_starting_partition(spec, config.period_max, config.grid_density, precision=prec)
    tree = partition_tree(spec, admissible, config.depth, prec)
    rows = [
        [level.depth, repr(p["a"]), repr(p["b"]), " ".join(map(str, p["address"]))]
        for level in tree.levels
        for p in level.pieces
    ]
    plot = [[[p["a"], level.depth], [p["b"], level.depth]] for level in tree.levels for p in level.pieces]
    return CommandOutput(
        tree.model_dump(mode="json"), csv=_csv(["depth", "a", "b", "address"], rows), plot=plot
    )


def _nest_and_cascades(spec: MapSpec, index: int, config: ExperimentConfig, prec: Precision) -> Dict[str, Any]:
    if not 0 <= index < len(spec.critical_points):
        raise ConfigurationError(
            "no critical point with this index", index=index, critical_points=len(spec.critical_points)
        )
    start = critical_start_piece(spec, index, prec)
    if start is None:
        raise ConfigurationError("critical point lies on the starting partition boundary", index=index)
    nest = principal_nest(
        spec, start, index, depth=config.depth, horizon=config.horizon, truncate=True, precision=prec
    )
    cascades = detect_cascades(nest, spec, index, prec)
    return {"start": list(start), "nest": annotate_cascades(nest, cascades), "cascades": cascades}


def run_nest(args: argparse.Namespace, config: ExperimentConfig, prec: Precision) -> CommandOutput:
    spec = _map(args.map)
    data = _nest_and_cascades(spec, args.critical, config, prec)
    rows = [[r.level, repr(r.piece.a), repr(r.piece.b), r.return_time, r.central] for r in data["nest"]]
    return CommandOutput(
        to_jsonable(data), csv=_csv(["level", "a", "b", "return_time", "central"], rows)
    )


def cascade_scan_job(c: float, degree: int, depth: int, horizon: int, sigma: float) -> Dict[str, Any]:
    """Principal nest, cascades and the Yoccoz profile of the longest cascade of x^d + c"""
    spec = create_power_map(degree, c)
    prec = Precision()
    start = critical_start_piece(spec, 0, prec)
    if start is None:
        return {"c": c, "nest_levels": 0, "cascades": [], "profile": None}
    nest = principal_nest(spec, start, depth=depth, horizon=horizon, truncate=True, precision=prec)
    cascades = detect_cascades(nest, spec, precision=prec)
    profile = None
    if cascades:
        longest = max(cascades, key=lambda k: k.length)
        try:
            profile = yoccoz_profile(spec, longest, sigma=sigma)
        except NotComparable as exc:
            logger.info("profile_skipped", c=c, reason=exc.message)
    return {"c": c, "nest_levels": len(nest), "cascades": cascades, "profile": profile}


def _family_degree(args: argparse.Namespace) -> int:
    """quad is x^2 + c; power takes its even degree from --degree"""
    if args.family == "quad":
        if args.degree not in (None, 2):
            raise ConfigurationError("the quad family has degree 2", degree=args.degree)
        return 2
    if args.degree is None or args.degree < 2 or args.degree % 2:
        raise ConfigurationError("the power family needs an even --degree >= 2", degree=args.degree)
    return args.degree


def run_cascade(args: argparse.Namespace, config: ExperimentConfig, prec: Precision) -> CommandOutput:
    degree = _family_degree(args)
    lo, hi = args.c_range
    values = np.linspace(lo, hi, args.count).tolist() if args.count > 1 else [lo]

    async def sweep() -> List[Any]:
        async with AnalysisRunner(workers=config.workers, precision=prec) as runner:
            return await runner.map(
                "cascade",
                cascade_scan_job,
                values,
                degree=degree,
                depth=config.depth,
                horizon=config.horizon,
                sigma=config.sigma,
            )

    outcomes = asyncio.run(sweep())
    scans = [o.result if o.ok else {"error": o.error.model_dump(mode="json", exclude={"timestamp"})} for o in outcomes]
    rows = []
    for value, scan in zip(values, scans):
        profile = scan.get("profile") if isinstance(scan, dict) else None
        for cascade in scan.get("cascades", []):
            rows.append(
                [
                    repr(value),
                    cascade["cascade_id"],
                    cascade["length"],
                    cascade["return_time"],
                    cascade["cascade_type"],
                    cascade["maximal"],
                    profile["constant"] if profile else "",
                    profile["spread"] if profile else "",
                ]
            )
    header = ["c", "cascade_id", "length", "return_time", "type", "maximal", "yoccoz_constant", "spread"]
    result = {"family": args.family, "map": f"x^{degree} + c", "scans": scans}
    return CommandOutput(result, csv=_csv(header, rows))


def run_enhanced_nest(args: argparse.Namespace, config: ExperimentConfig, prec: Precision) -> CommandOutput:
    spec = _map(args.map)
    data = _nest_and_cascades(spec, args.critical, config, prec)
    if not 0 <= args.cascade < len(data["cascades"]):
        raise CascadeNotFound(
            "no cascade with this index in the principal nest",
            index=args.cascade,
            cascades=len(data["cascades"]),
            levels=len(data["nest"]),
        )
    cascade = data["cascades"][args.cascade]
    nest = data["nest"]
    outer = next((r for r in nest if r.level == cascade.start_level - 1), None)
    base = outer.piece.as_tuple() if outer is not None else tuple(data["start"])
    enhanced = enhanced_cascade_nest(spec, base, cascade, args.critical, depth=config.depth, precision=prec)
    return CommandOutput({"cascade": cascade.model_dump(mode="json"), "enhanced": enhanced.model_dump(mode="json")})


def run_disk_pullback(args: argparse.Namespace, config: ExperimentConfig, prec: Precision) -> CommandOutput:
    if args.power is not None:
        report = power_pullback(args.power, args.K, args.theta, config.samples)
        return CommandOutput(report.model_dump(mode="json"))
    if not args.map or args.interval is None:
        raise ConfigurationError("disk-pullback needs --power or a map with --interval")
    spec = _map(args.map)
    J = tuple(args.interval)
    target = J
    for _ in range(args.steps):
        target = interval_image(spec, target)
    chain = chain_of(spec, J, args.steps, target, prec)
    trace = chain_disk_pullback(spec, disk(target, args.theta), chain, samples=config.samples)
    return CommandOutput(trace.model_dump(mode="json"), plot=trace_polylines(trace))


def _z_points(spec: MapSpec, given: Optional[List[float]], config: ExperimentConfig, prec: Precision) -> Any:
    if given:
        return given
    return build_starting_partition(spec, config.period_max, config.grid_density, precision=prec)


def run_conjugate(args: argparse.Namespace, config: ExperimentConfig, prec: Precision) -> CommandOutput:
    f, g = _map(args.map), _map(args.other)
    Zf = _z_points(f, args.z_f, config, prec)
    Zg = _z_points(g, args.z_g, config, prec)
    grid = build_conjugacy(f, g, Zf, Zg, config.depth, precision=prec)
    parabolic = [float(h.point) for h in f.parabolic_hints if not isinstance(h.point, str)]
    qs = qs_constant(grid, parabolic_points=parabolic)
    rows = [[repr(s.scale), repr(s.kappa)] for s in qs.per_scale]
    result = {"grid": grid.model_dump(mode="json"), "qs": qs.model_dump(mode="json")}
    return CommandOutput(result, csv=_csv(["scale", "kappa"], rows), plot=list(zip(grid.xs, grid.ys)))


def run_fibonacci(args: argparse.Namespace, config: ExperimentConfig, prec: Precision) -> CommandOutput:
    if args.mismatch is not None:
        report = order_mismatch_experiment(args.degree, args.mismatch, config.depth, prec)
        rows = [
            [fit.degree, n + 1, repr(a)] for fit in report.fits for n, a in enumerate(fit.distances)
        ]
        return CommandOutput(report.model_dump(mode="json"), csv=_csv(["degree", "n", "distance"], rows))
    report = fibonacci_parameter_search(args.degree, config.depth, prec)
    return CommandOutput(report.model_dump(mode="json"))


def run_report(args: argparse.Namespace, config: ExperimentConfig, prec: Precision) -> CommandOutput:
    return CommandOutput(generate_report_schemas())


HANDLERS: Dict[Command, Callable[[argparse.Namespace, ExperimentConfig, Precision], CommandOutput]] = {
    Command.ANALYZE: run_analyze,
    Command.PARTITION: run_partition,
    Command.NEST: run_nest,
    Command.CASCADE: run_cascade,
    Command.ENHANCED_NEST: run_enhanced_nest,
    Command.DISK_PULLBACK: run_disk_pullback,
    Command.CONJUGATE: run_conjugate,
    Command.FIBONACCI: run_fibonacci,
    Command.REPORT: run_report,
}


# Parser and configuration


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="ExperimentConfig JSON file")
    common.add_argument("--output", help="Write the report here instead of stdout")
    common.add_argument("--csv", action="store_true", default=None, help="Emit CSV tables")
    common.add_argument("--plot-data", action="store_true", default=None, help="Emit plot-ready polylines")
    common.add_argument("--workers", type=int, help="Worker pool size")
    common.add_argument("--precision", type=int, help="Precision in bits (53 is binary64)")
    common.add_argument("--depth", type=int, help="Depth of partitions, nests and grids")
    common.add_argument("--horizon", type=int, help="Orbit horizon")
    common.add_argument("--samples", type=int, help="Boundary or grid samples")
    common.add_argument("--log-level", default=None, help="Log level (default WARNING)")

    parser = argparse.ArgumentParser(prog="puzzlekit", description=__doc__.strip().splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser(Command.ANALYZE.value, parents=[common], help="Orbits, partition and recurrence")
    p.add_argument("map")

    p = sub.add_parser(Command.PARTITION.value, parents=[common], help="Puzzle partition tree")
    p.add_argument("map")

    for command in (Command.NEST, Command.ENHANCED_NEST):
        p = sub.add_parser(command.value, parents=[common], help="Principal nest and cascades")
        p.add_argument("map")
        p.add_argument("--critical", type=int, default=0)
        if command == Command.ENHANCED_NEST:
            p.add_argument("--cascade", type=int, default=0, help="Index of the cascade to enhance")

    p = sub.add_parser(Command.CASCADE.value, parents=[common], help="Cascade scan of x^d + c")
    p.add_argument("--family", choices=["quad", "power"], default="quad")
    p.add_argument("--degree", type=int, help="Even degree d of x^d + c (power family)")
    p.add_argument("--c-range", type=float, nargs=2, required=True, metavar=("LO", "HI"))
    p.add_argument("--count", type=int, default=1)

    p = sub.add_parser(Command.DISK_PULLBACK.value, parents=[common], help="Poincare disk pullbacks")
    p.add_argument("map", nargs="?")
    p.add_argument("--power", type=int, help="Trace z -> z^ell instead of a map")
    p.add_argument("--K", type=float, default=2.0)
    p.add_argument("--theta", type=float, default=1.0)
    p.add_argument("--interval", type=float, nargs=2, metavar=("A", "B"))
    p.add_argument("--steps", type=int, default=1)

    p = sub.add_parser(Command.CONJUGATE.value, parents=[common], help="Conjugacy grid and qs distortion")
    p.add_argument("map")
    p.add_argument("other")
    p.add_argument("--z-f", type=float, nargs="+", help="Admissible set of the first map")
    p.add_argument("--z-g", type=float, nargs="+", help="Admissible set of the second map")

    p = sub.add_parser(Command.FIBONACCI.value, parents=[common], help="Fibonacci parameters")
    p.add_argument("--degree", type=int, default=2)
    p.add_argument("--mismatch", type=int, help="Second degree for the order-mismatch experiment")

    sub.add_parser(Command.REPORT.value, parents=[common], help="Print the JSON schemas")
    return parser


FLAG_FIELDS = {
    "output": "output",
    "csv": "csv",
    "plot_data": "plot_data",
    "workers": "workers",
    "precision": "precision_bits",
    "depth": "depth",
    "horizon": "horizon",
    "samples": "samples",
}


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    """Config file, then flags; precision falls back to PUZZLEKIT_PRECISION"""
    data: Dict[str, Any] = {}
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read config: {exc}", path=args.config) from exc
    for flag, field in FLAG_FIELDS.items():
        value = getattr(args, flag, None)
        if value is not None:
            data[field] = value
    data.setdefault("precision_bits", default_precision().bits)
    for name in ("map", "other"):
        if getattr(args, name, None):
            data.setdefault("map_files", []).append(getattr(args, name))
    return ExperimentConfig.model_validate(data)


def _write(text: str, output: Optional[str]) -> None:
    if output:
        Path(output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        configure_logging(args.log_level or os.environ.get(LOG_LEVEL_ENV_VAR, "WARNING"))
    except ConfigurationError as exc:
        _write(exc.to_error_data().model_dump_json(indent=2) + "\n", None)
        return exc.exit_code
    try:
        config = load_config(args)
        prec = Precision(bits=config.precision_bits)
        command = Command(args.command)
        with prec.activate():
            output = HANDLERS[command](args, config, prec)
    except ValidationError as exc:
        error = create_error_data("ValidationError", str(exc))
        _write(error.model_dump_json(indent=2) + "\n", None)
        return 2
    except PuzzlekitError as exc:
        logger.error("command_failed", command=args.command, error_type=type(exc).__name__)
        _write(exc.to_error_data().model_dump_json(indent=2) + "\n", None)
        return exc.exit_code

    if config.csv and output.csv is not None:
        _write(output.csv, config.output)
    elif config.plot_data and output.plot is not None:
        _write(json.dumps(to_jsonable(output.plot)) + "\n", config.output)
    else:
        report = create_report(command, config, output.result)
        _write(report.model_dump_json(indent=2) + "\n", config.output)
    return 0


if __name__ == "__main__":
    sys.exit(main())
