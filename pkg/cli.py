#!/usr/bin/env python3
"""
Command line front end for kmsgraph.

    python3 cli.py analyze  --graph graphs/cuntz_2.json
    python3 cli.py simplex  --graph graphs/edge.json --q 0.5
    python3 cli.py state    --graph graphs/edge.json --beta 1 --epsilon extreme:w
    python3 cli.py critical --graph graphs/cuntz_2.json
    python3 cli.py ground   --graph graphs/loop.json --epsilon uniform
    python3 cli.py verify   --graph graphs/loop.json --q 0.5 --epsilon extreme:v
    python3 cli.py sweep    --graph graphs/cuntz_2.json --grid 0:2:9

Reports go to stdout (or --out); logs and errors go to stderr.
Exit codes: 0 ok, 1 other failure, 2 graph parse error, 3 inadmissible input,
4 failed verification.
"""

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Any

import numpy as np

from config import Config
from errors import AdmissibilityError, KmsGraphError, VerificationError
from graph import (
    DirectedGraph,
    block_decomposition,
    count_paths,
    has_cycle,
    load_graph,
    sinks,
    source_saturation,
    sources,
    strongly_connected,
    strongly_connected_components,
    vertex_matrix,
)
from kms_states import (
    KmsState,
    Temperature,
    beta_range_report,
    canonical_float,
    ck_simplex_extreme_points,
    critical_state_from_measure,
    critical_state_irreducible,
    critical_state_with_sources,
    epsilon_points_as_dicts,
    ground_state,
    measure_from_epsilon,
    normalize_epsilon,
    simplex_extreme_points,
    sources_hypotheses,
    toeplitz_state,
    y_vector,
)
from oracle import verify_state
from spectral import spectral_radius

logger = logging.getLogger(__name__)

NEEDS_TEMPERATURE = ("simplex", "state", "verify")
NEEDS_EPSILON = ("state", "ground", "verify")


@dataclass
class RunConfig:
    """Everything one CLI invocation needs, resolved from flags and the config file."""

    command: str
    graph_path: str
    q: float | None
    epsilon: str | None
    measure: str | None
    normalize: bool
    depth: int | None
    output_format: str
    out: str | None
    grid: str | None
    parallelism: int
    settings: Config

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> "RunConfig":
        if args.config and not os.path.exists(args.config):
            logger.warning("Config file %s not found, using defaults", args.config)
        settings = Config.load_from_file(args.config or ".kmsgraph.yml")
        if getattr(args, "tol", None) is not None:
            settings.set_tolerance("verification", args.tol)

        q = None
        if getattr(args, "beta", None) is not None:
            q = Temperature.from_beta(args.beta).q
        elif getattr(args, "q", None) is not None:
            q = Temperature.from_q(args.q).q

        output_format = args.format or ("csv" if args.command == "sweep" else "json")
        parallelism = getattr(args, "parallel", None) or settings.oracle("parallelism")
        return cls(
            command=args.command,
            graph_path=args.graph,
            q=q,
            epsilon=getattr(args, "epsilon", None),
            measure=getattr(args, "measure", None),
            normalize=getattr(args, "normalize", False),
            depth=getattr(args, "depth", None),
            output_format=output_format,
            out=args.out,
            grid=getattr(args, "grid", None),
            parallelism=int(parallelism),
            settings=settings,
        )


def canonicalize(value: Any, digits: int = 15) -> Any:
    """Round every float for byte-stable output; infinities become strings."""
    if isinstance(value, dict):
        return {str(k): canonicalize(v, digits) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [canonicalize(v, digits) for v in value]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return canonical_float(float(value), digits)
    return value


def render_json(payload: Any, digits: int = 15) -> str:
    return json.dumps(canonicalize(payload, digits), sort_keys=True, indent=2, ensure_ascii=False)


def _format_cell(value: Any, digits: int) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        rounded = canonical_float(value, digits)
        return rounded if isinstance(rounded, str) else f"{rounded:.{digits}g}"
    return str(value)


def render_csv(rows: list[dict[str, Any]], columns: list[str], digits: int = 15) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_format_cell(row.get(c), digits) for c in columns])
    return buffer.getvalue()


def _load_vector_document(spec: str, what: str) -> Any:
    text = spec
    if not spec.lstrip().startswith(("{", "[")):
        try:
            with open(spec, encoding="utf-8") as f:
                text = f.read()
        except OSError as e:
            raise AdmissibilityError(f"Cannot read {what} file {spec}: {e}") from e
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise AdmissibilityError(f"Malformed {what}: {e}") from e


def parse_vector_spec(
    spec: str, graph: DirectedGraph, what: str = "epsilon"
) -> tuple[str, np.ndarray]:
    """
    Decode an epsilon or measure SPEC.

    Returns (form, vector) with form "extreme", "uniform" or "explicit". For
    "extreme:<v>" the vector is the point mass at v; callers rescale it.
    """
    if spec == "uniform":
        return "uniform", np.full(len(graph.vertices), 1.0 / len(graph.vertices))
    if spec.startswith("extreme:"):
        vertex = spec.split(":", 1)[1]
        if vertex not in graph.index:
            raise AdmissibilityError(f"Unknown vertex in {what}: {vertex!r}")
        point = np.zeros(len(graph.vertices))
        point[graph.index[vertex]] = 1.0
        return "extreme", point

    document = _load_vector_document(spec, what)
    if isinstance(document, dict):
        unknown = set(document) - set(graph.vertices)
        if unknown:
            raise AdmissibilityError(f"Unknown vertices in {what}: {sorted(unknown)}")
        values = [document.get(v, 0.0) for v in graph.vertices]
    elif isinstance(document, list):
        if len(document) != len(graph.vertices):
            raise AdmissibilityError(
                f"{what} has {len(document)} entries; the graph has {len(graph.vertices)} vertices"
            )
        values = document
    else:
        raise AdmissibilityError(f"{what} must be a JSON object or array")
    try:
        return "explicit", np.array([float(x) for x in values])
    except (TypeError, ValueError) as e:
        raise AdmissibilityError(f"{what} entries must be numbers") from e


def toeplitz_epsilon(config: RunConfig, graph: DirectedGraph, q: float) -> np.ndarray:
    """An epsilon on the simplex at q from the configured SPEC."""
    assert config.epsilon is not None
    form, vector = parse_vector_spec(config.epsilon, graph)
    if form != "explicit" or config.normalize:
        return normalize_epsilon(graph, q, vector)
    return vector


def _require_q(config: RunConfig) -> float:
    if config.q is None:
        raise AdmissibilityError(f"{config.command} needs --beta or --q")
    return config.q


def _state_payload(state: KmsState) -> dict[str, Any]:
    return {"state": state.to_dict()}


def cmd_analyze(graph: DirectedGraph, config: RunConfig) -> dict[str, Any]:
    """Structure, spectrum and the admissible inverse temperatures."""
    matrix = vertex_matrix(graph)
    spectrum = spectral_radius(matrix)
    chain = source_saturation(graph)
    blocks = block_decomposition(graph, chain)
    k = blocks.complement_size
    n = len(graph.vertices)
    report = beta_range_report(graph)
    return {
        "vertices": list(graph.vertices),
        "edge_count": len(graph.edges),
        "sources": graph.ordered(sources(graph)),
        "sinks": graph.ordered(sinks(graph)),
        "scc_count": len(strongly_connected_components(graph)),
        "strongly_connected": strongly_connected(graph),
        "has_cycle": has_cycle(graph),
        "path_counts": [count_paths(graph, length) for length in range(1, 4)],
        "saturation_chain": [graph.ordered(level) for level in chain.levels],
        "blocks": {
            "ordering": list(blocks.ordering),
            "complement": [k, k],
            "coupling": [k, n - k],
            "saturated": [n - k, n - k],
        },
        "rho": spectrum.rho,
        "classification": str(spectrum.classification),
        "critical_beta": report.critical_beta,
        "beta_range": report.to_dict(),
    }


def cmd_simplex(graph: DirectedGraph, config: RunConfig) -> dict[str, Any]:
    """y-vector and extreme points of the Toeplitz and Cuntz-Krieger simplices."""
    q = _require_q(config)
    y = y_vector(graph, q)
    points = simplex_extreme_points(graph, q)
    ck_points = ck_simplex_extreme_points(graph, q)

    return {
        "q": q,
        "beta": Temperature(q).beta,
        "y": epsilon_points_as_dicts(graph, [y])[0],
        "extreme_points": epsilon_points_as_dicts(graph, points),
        "ck_extreme_points": epsilon_points_as_dicts(graph, ck_points),
        "toeplitz_dim": len(graph.vertices) - 1,
        "ck_dim": len(sources(graph)),
    }


def cmd_state(graph: DirectedGraph, config: RunConfig) -> dict[str, Any]:
    q = _require_q(config)
    return _state_payload(toeplitz_state(graph, q, toeplitz_epsilon(config, graph, q)))


def cmd_critical(graph: DirectedGraph, config: RunConfig) -> dict[str, Any]:
    """Dispatch to the critical-state construction whose hypotheses hold."""
    if strongly_connected(graph):
        if config.measure:
            logger.info("Graph is strongly connected; ignoring --measure")
        state = critical_state_irreducible(graph)
        construction = "irreducible"
    else:
        reason = sources_hypotheses(graph)
        if reason is None:
            state = critical_state_with_sources(graph)
            construction = "sources"
        elif config.measure:
            _, measure = parse_vector_spec(config.measure, graph, "measure")
            state = critical_state_from_measure(graph, measure)
            construction = "measure"
        else:
            raise AdmissibilityError(
                f"Graph is not strongly connected and {reason}; "
                "pass --measure with a subinvariant probability vector"
            )
    payload = _state_payload(state)
    payload["construction"] = construction
    return payload


def cmd_ground(graph: DirectedGraph, config: RunConfig) -> dict[str, Any]:
    assert config.epsilon is not None
    form, vector = parse_vector_spec(config.epsilon, graph)
    if config.normalize and form == "explicit":
        total = float(vector.sum())
        if total <= 0:
            raise AdmissibilityError("epsilon is zero")
        vector = vector / total
    return _state_payload(ground_state(graph, vector))


def cmd_verify(graph: DirectedGraph, config: RunConfig) -> dict[str, Any]:
    """Build phi_epsilon and run every verification check on it."""
    q = _require_q(config)
    state = toeplitz_state(graph, q, toeplitz_epsilon(config, graph, q))
    settings = config.settings
    report = verify_state(
        graph,
        q,
        state.epsilon,
        state=state,
        depth=config.depth,
        tol=settings.tolerance("verification"),
        probability_tol=settings.tolerance("probability"),
        tail_target=settings.oracle("tail_target"),
        max_basis=settings.oracle("max_basis"),
        sample_length=settings.oracle("sample_length"),
        parallelism=config.parallelism,
    )
    if report.tail_target_met is False:
        logger.warning(
            "Tail mass %.3g is above the target %.3g; oracle agreement holds only to that bound",
            report.tail_mass,
            report.tail_target,
        )
    return {"state": state.to_dict(), "report": report.to_dict()}


def parse_grid(spec: str) -> list[float]:
    """`b1,b2,...`, `[b1,b2,...]` or `start:stop:count`."""
    spec = spec.strip()
    if spec.startswith("[") and spec.endswith("]"):
        spec = spec[1:-1]
    try:
        if ":" in spec:
            start, stop, count = spec.split(":")
            return [float(b) for b in np.linspace(float(start), float(stop), int(count))]
        return [float(b) for b in spec.split(",") if b.strip()]
    except ValueError as e:
        raise AdmissibilityError(f"Malformed beta grid {spec!r}: {e}") from e


def sweep_columns(graph: DirectedGraph) -> list[str]:
    return (
        ["beta", "q", "status"]
        + [f"y_{v}" for v in graph.vertices]
        + [f"m_{v}" for v in graph.vertices]
        + ["toeplitz_dim", "ck_dim"]
    )


def cmd_sweep(graph: DirectedGraph, config: RunConfig) -> list[dict[str, Any]]:
    """One row per beta: y and m along a fixed epsilon ray, plus simplex dimensions."""
    if not config.grid:
        raise AdmissibilityError("sweep needs --grid")
    _, direction = parse_vector_spec(config.epsilon or "uniform", graph)
    rho = spectral_radius(vertex_matrix(graph)).rho
    tol = config.settings.tolerance("admissibility")
    toeplitz_dim = len(graph.vertices) - 1
    ck_dim = len(sources(graph))

    rows = []
    for beta in parse_grid(config.grid):
        q = Temperature.from_beta(beta).q
        row: dict[str, Any] = {"beta": beta, "q": q}
        if q * rho >= 1.0 - tol:
            critical = "-inf" if rho == 0 else f"{math.log(rho):.15g}"
            logger.warning(
                "beta=%.15g is at or below the critical value %s; skipped", beta, critical
            )
            row["status"] = "below_critical"
            rows.append(row)
            continue
        y = y_vector(graph, q, tol)
        m = measure_from_epsilon(graph, q, normalize_epsilon(graph, q, direction, tol), tol)
        row["status"] = "ok"
        row.update({f"y_{v}": float(x) for v, x in zip(graph.vertices, y, strict=True)})
        row.update({f"m_{v}": float(x) for v, x in zip(graph.vertices, m, strict=True)})
        row["toeplitz_dim"] = toeplitz_dim
        row["ck_dim"] = ck_dim
        rows.append(row)
    return rows


HANDLERS = {
    "analyze": cmd_analyze,
    "simplex": cmd_simplex,
    "state": cmd_state,
    "critical": cmd_critical,
    "ground": cmd_ground,
    "verify": cmd_verify,
    "sweep": cmd_sweep,
}


def _positive_float(text: str) -> float:
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return value


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--graph", required=True, help="Graph JSON file")
    common.add_argument("--config", help="YAML config file (default: .kmsgraph.yml)")
    common.add_argument("--format", choices=["json", "csv"], help="Output format")
    common.add_argument("--out", help="Write the report here instead of stdout")
    common.add_argument(
        "-v", "--verbose", action="count", default=0, help="-v for info, -vv for debug logs"
    )

    temperature = argparse.ArgumentParser(add_help=False)
    group = temperature.add_mutually_exclusive_group()
    group.add_argument("--beta", type=float, help="Inverse temperature")
    group.add_argument("--q", type=float, help="q = exp(-beta)")

    epsilon = argparse.ArgumentParser(add_help=False)
    epsilon.add_argument(
        "--epsilon",
        help='JSON object/array, a JSON file, "extreme:<vertex>" or "uniform"',
    )
    epsilon.add_argument(
        "--normalize", action="store_true", help="Rescale an explicit epsilon onto the simplex"
    )

    parser = argparse.ArgumentParser(
        description="KMS states of the gauge dynamics on graph Toeplitz algebras"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("analyze", parents=[common], help="Structure and spectral summary")
    sub.add_parser("simplex", parents=[common, temperature], help="KMS simplex at one beta")
    sub.add_parser("state", parents=[common, temperature, epsilon], help="One KMS_beta state")
    critical = sub.add_parser("critical", parents=[common], help="State at the critical beta")
    critical.add_argument(
        "--measure", help="Subinvariant probability vector (same forms as epsilon)"
    )
    sub.add_parser("ground", parents=[common, epsilon], help="Ground state")
    verify = sub.add_parser(
        "verify", parents=[common, temperature, epsilon], help="Verify a state against the oracle"
    )
    verify.add_argument("--depth", type=_positive_int, help="Oracle path depth (default: auto)")
    verify.add_argument("--tol", type=_positive_float, help="Verification tolerance")
    verify.add_argument("--parallel", type=_positive_int, help="Oracle worker threads")
    sweep = sub.add_parser("sweep", parents=[common, epsilon], help="Beta sweep table")
    sweep.add_argument(
        "--grid",
        required=True,
        help='"b1,b2,...", "[b1,b2,...]" or "start:stop:count"; '
        "write --grid=-1,0,1 when the first beta is negative",
    )
    return parser


def _emit(text: str, out: str | None) -> None:
    if out:
        with open(out, "w", encoding="utf-8") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    level = logging.WARNING
    if args.verbose == 1:
        level = logging.INFO
    elif args.verbose >= 2:
        level = logging.DEBUG
    logging.basicConfig(
        level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr
    )

    if args.command in NEEDS_EPSILON and not args.epsilon:
        parser.error(f"{args.command} requires --epsilon")
    if args.format == "csv" and args.command != "sweep":
        parser.error("--format csv is only available for sweep")

    try:
        config = RunConfig.from_args(args)
        graph = load_graph(config.graph_path)
        logger.info(
            "Loaded %s: %d vertices, %d edges",
            config.graph_path,
            len(graph.vertices),
            len(graph.edges),
        )
        if config.command in NEEDS_TEMPERATURE and config.q is None:
            raise AdmissibilityError(f"{config.command} needs --beta or --q")

        result = HANDLERS[config.command](graph, config)
        digits = int(config.settings.get("output")["significant_digits"])
        if config.command == "sweep" and config.output_format == "csv":
            assert isinstance(result, list)
            _emit(render_csv(result, sweep_columns(graph), digits), config.out)
        else:
            _emit(render_json(result, digits) + "\n", config.out)

        if config.command == "verify" and not result["report"]["passed"]:
            failed = ", ".join(c["name"] for c in result["report"]["checks"] if not c["passed"])
            print(f"❌ Verification failed: {failed}", file=sys.stderr)
            return VerificationError.exit_code
    except KmsGraphError as e:
        print(f"❌ {e}", file=sys.stderr)
        return e.exit_code
    except Exception as e:
        print(f"❌ Error: {e}", file=sys.stderr)
        if args.verbose:
            import traceback

            traceback.print_exc()
        else:
            print("Run with -v for full traceback", file=sys.stderr)
        return 1

    return 0


if __name__ == "__main__":
    sys.exit(main())
