"""
KMS states of the gauge dynamics on the Toeplitz algebra of a finite graph.

Above the critical inverse temperature ln rho(A), the KMS_beta states form a
simplex parametrized by epsilon >= 0 with epsilon·y = 1, where y solves
(I - qA)^T y = 1 and q = e^{-beta}. The state phi_epsilon has
    phi(s_mu s_nu*) = delta_{mu,nu} q^{|mu|} m_{s(mu)},   m = (I - qA)^{-1} epsilon.
It factors through the Cuntz-Krieger quotient exactly when epsilon vanishes
off the sources.
"""

import logging
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
try:
    from enum import StrEnum
except ImportError:  # Python < 3.11
    from enum import Enum

    class StrEnum(str, Enum):  # type: ignore[no-redef]
        __str__ = str.__str__
        __format__ = str.__format__
from typing import Any

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.linalg import lu_factor, lu_solve

from config import default_tolerance
from errors import AdmissibilityError
from graph import (
    DirectedGraph,
    Path,
    VertexId,
    block_decomposition,
    sinks,
    source_saturation,
    sources,
    strongly_connected,
    vertex_matrix,
)
from spectral import (
    Classification,
    check_subinvariant,
    classify_matrix,
    critical_q,
    is_irreducible,
    perron_vector,
    spectral_radius,
)

logger = logging.getLogger(__name__)

FloatVector = NDArray[np.float64]


def canonical_float(value: float, digits: int = 15) -> float | str:
    """Round to `digits` significant digits; infinities become "inf"/"-inf"."""
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    if math.isnan(value):
        raise ValueError("NaN cannot be serialized")
    return float(f"{value:.{digits}g}") + 0.0


@dataclass(frozen=True)
class Temperature:
    """Inverse temperature beta, carried as q = e^{-beta}."""

    q: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.q) or self.q <= 0:
            raise AdmissibilityError(f"q must be positive and finite, got {self.q}")

    @classmethod
    def from_beta(cls, beta: float) -> "Temperature":
        if not math.isfinite(beta):
            raise AdmissibilityError(f"beta must be finite, got {beta}")
        try:
            q = math.exp(-beta)
        except OverflowError as e:
            raise AdmissibilityError(
                f"beta={beta} gives q = exp(-beta) beyond the float range"
            ) from e
        return cls(q)

    @classmethod
    def from_q(cls, q: float) -> "Temperature":
        return cls(q)

    @property
    def beta(self) -> float:
        return 0.0 - math.log(self.q)


class StateKind(StrEnum):
    TOEPLITZ = "Toeplitz"
    CUNTZ_KRIEGER = "CuntzKrieger"
    CRITICAL = "Critical"
    GROUND = "Ground"


@dataclass(frozen=True)
class SpanningElement:
    """s_mu s_nu* with s(mu) == s(nu); both paths None is the zero element."""

    mu: Path | None
    nu: Path | None

    def __post_init__(self) -> None:
        if (self.mu is None) != (self.nu is None):
            raise ValueError("A spanning element needs both paths, or neither for ZERO")
        if self.mu is not None and self.nu is not None and self.mu.source != self.nu.source:
            raise ValueError(
                f"s({self.mu}) = {self.mu.source} differs from s({self.nu}) = {self.nu.source}"
            )

    @property
    def is_zero(self) -> bool:
        return self.mu is None

    @property
    def degree(self) -> int:
        """|mu| - |nu|; the gauge action scales s_mu s_nu* by e^{it·degree}."""
        if self.mu is None or self.nu is None:
            return 0
        return self.mu.length - self.nu.length

    def adjoint(self) -> "SpanningElement":
        return SpanningElement(self.nu, self.mu)

    def __str__(self) -> str:
        if self.mu is None:
            return "0"
        return f"s[{self.mu}] s[{self.nu}]*"


ZERO = SpanningElement(None, None)


@dataclass(frozen=True, eq=False)
class KmsState:
    """
    Everything needed to evaluate a KMS state on spanning elements.

    For kind Ground, q is 0 and m equals epsilon; the resolvent relation
    (I - qA)m = epsilon does not apply.
    """

    vertices: tuple[VertexId, ...]
    q: float
    m: FloatVector
    epsilon: FloatVector
    kind: StateKind
    factors_through_ck: bool

    @property
    def beta(self) -> float:
        if self.kind is StateKind.GROUND:
            return math.inf
        return 0.0 - math.log(self.q)

    def measure(self, v: VertexId) -> float:
        return float(self.m[self.vertices.index(v)])

    def to_dict(self, digits: int | None = None) -> dict[str, Any]:
        def number(x: float) -> float | str:
            if digits is None:
                return "inf" if math.isinf(x) else float(x)
            return canonical_float(x, digits)

        return {
            "q": number(self.q),
            "beta": number(self.beta),
            "m": {v: number(x) for v, x in zip(self.vertices, self.m, strict=True)},
            "epsilon": {v: number(x) for v, x in zip(self.vertices, self.epsilon, strict=True)},
            "kind": str(self.kind),
            "factors_through_ck": self.factors_through_ck,
        }


def vertex_vector(
    graph: DirectedGraph, values: ArrayLike | Mapping[VertexId, float]
) -> FloatVector:
    """A vector in canonical order, from a sequence or a {vertex: value} mapping."""
    if isinstance(values, Mapping):
        unknown = set(values) - set(graph.vertices)
        if unknown:
            raise AdmissibilityError(f"Unknown vertices: {sorted(unknown)}")
        return np.array([float(values.get(v, 0.0)) for v in graph.vertices])
    vector = np.asarray(values, dtype=np.float64)
    if vector.shape != (len(graph.vertices),):
        raise AdmissibilityError(
            f"Expected {len(graph.vertices)} entries in canonical order, got shape {vector.shape}"
        )
    return vector


def _require_admissible(graph: DirectedGraph, q: float, tol: float) -> NDArray[np.int64]:
    if not math.isfinite(q) or q <= 0:
        raise AdmissibilityError(f"q must be positive and finite, got {q}")
    matrix = vertex_matrix(graph)
    rho = spectral_radius(matrix).rho
    if q * rho >= 1.0 - tol:
        critical = "-inf" if rho == 0 else f"{math.log(rho):.15g}"
        raise AdmissibilityError(
            f"q={q:.15g} (beta={-math.log(q):.15g}) is not admissible: "
            f"requires beta > ln rho(A) = {critical}"
        )
    return matrix


def _resolvent(matrix: NDArray[np.int64], q: float) -> tuple[FloatVector, NDArray[np.int32]]:
    size = matrix.shape[0]
    return lu_factor(np.eye(size) - q * matrix.astype(np.float64))


def _checked_solution(solution: FloatVector) -> FloatVector:
    if not np.all(np.isfinite(solution)):
        raise RuntimeError("Resolvent solve produced non-finite values")
    return solution


def y_vector(
    graph: DirectedGraph, q: float, tol: float = default_tolerance("admissibility")
) -> FloatVector:
    """y_v = sum of q^{|mu|} over paths mu with s(mu) = v; solves (I - qA)^T y = 1."""
    matrix = _require_admissible(graph, q, tol)
    ones = np.ones(matrix.shape[0])
    return _checked_solution(lu_solve(_resolvent(matrix, q), ones, trans=1))


def simplex_extreme_points(
    graph: DirectedGraph, q: float, tol: float = default_tolerance("admissibility")
) -> list[FloatVector]:
    """epsilon^u = delta_u / y_u for every vertex u."""
    y = y_vector(graph, q, tol)
    points = []
    for u in range(len(graph.vertices)):
        point = np.zeros(len(graph.vertices))
        point[u] = 1.0 / y[u]
        points.append(point)
    return points


def measure_from_epsilon(
    graph: DirectedGraph,
    q: float,
    epsilon: ArrayLike | Mapping[VertexId, float],
    tol: float = default_tolerance("admissibility"),
) -> FloatVector:
    """m = (I - qA)^{-1} epsilon."""
    eps = vertex_vector(graph, epsilon)
    if np.any(eps < -tol):
        raise AdmissibilityError("epsilon must be nonnegative")
    matrix = _require_admissible(graph, q, tol)
    return _checked_solution(lu_solve(_resolvent(matrix, q), eps))


def epsilon_from_measure(
    graph: DirectedGraph, q: float, m: ArrayLike | Mapping[VertexId, float]
) -> FloatVector:
    """epsilon = (I - qA)m. Negative entries mean m is not subinvariant at q."""
    measure = vertex_vector(graph, m)
    return measure - q * (vertex_matrix(graph).astype(np.float64) @ measure)


def state_value(state: KmsState, element: SpanningElement) -> float:
    if element.mu is None or element.nu is None:
        return 0.0
    mu, nu = element.mu, element.nu
    if mu != nu:
        return 0.0
    index = state.vertices.index(mu.source)
    if state.kind is StateKind.GROUND:
        return float(state.epsilon[index]) if mu.is_vertex else 0.0
    return float(state.q**mu.length * state.m[index])


def _factors(graph: DirectedGraph, epsilon: FloatVector, tol: float) -> bool:
    source_set = sources(graph)
    return all(
        epsilon[i] <= tol for i, v in enumerate(graph.vertices) if v not in source_set
    )


def factors_through_ck(
    graph: DirectedGraph,
    q: float,
    epsilon: ArrayLike | Mapping[VertexId, float],
    tol: float = default_tolerance("factoring"),
) -> bool:
    """epsilon_v <= tol on every vertex that is not a source."""
    eps = vertex_vector(graph, epsilon)
    result = _factors(graph, eps, tol)

    # same criterion read off m: m_v == (qAm)_v on non-sources
    m = measure_from_epsilon(graph, q, eps)
    defects = epsilon_from_measure(graph, q, m)
    source_set = sources(graph)
    via_measure = all(
        abs(defects[i]) <= tol + 1e-12
        for i, v in enumerate(graph.vertices)
        if v not in source_set
    )
    if via_measure != result:
        logger.warning("Factoring criterion disagrees between epsilon and m at q=%.15g", q)
    return result


def ck_simplex_extreme_points(
    graph: DirectedGraph, q: float, tol: float = default_tolerance("admissibility")
) -> list[FloatVector]:
    """The extreme points epsilon^u with u a source."""
    source_set = sources(graph)
    points = simplex_extreme_points(graph, q, tol)
    return [p for v, p in zip(graph.vertices, points, strict=True) if v in source_set]


def toeplitz_state(
    graph: DirectedGraph,
    q: float,
    epsilon: ArrayLike | Mapping[VertexId, float],
    *,
    tol: float = default_tolerance("admissibility"),
    probability_tol: float = default_tolerance("probability"),
    factoring_tol: float = default_tolerance("factoring"),
) -> KmsState:
    """The KMS_beta state phi_epsilon for epsilon in the simplex."""
    eps = vertex_vector(graph, epsilon)
    if np.any(eps < -tol):
        raise AdmissibilityError("epsilon must be nonnegative")
    y = y_vector(graph, q, tol)
    weight = float(eps @ y)
    if abs(weight - 1.0) > probability_tol:
        raise AdmissibilityError(
            f"epsilon is not in the simplex: epsilon·y = {weight:.15g}, expected 1 "
            "(use normalization to rescale)"
        )
    m = measure_from_epsilon(graph, q, eps, tol)
    factors = _factors(graph, eps, factoring_tol)
    kind = StateKind.CUNTZ_KRIEGER if factors else StateKind.TOEPLITZ
    return KmsState(graph.vertices, q, m, eps, kind, factors)


def normalize_epsilon(
    graph: DirectedGraph,
    q: float,
    direction: ArrayLike | Mapping[VertexId, float],
    tol: float = default_tolerance("admissibility"),
) -> FloatVector:
    """Rescale a nonnegative direction onto the simplex: epsilon / (epsilon·y)."""
    eps = vertex_vector(graph, direction)
    if np.any(eps < -tol):
        raise AdmissibilityError("epsilon direction must be nonnegative")
    weight = float(eps @ y_vector(graph, q, tol))
    if weight <= 0:
        raise AdmissibilityError("epsilon direction is zero")
    return eps / weight


def ck_projection_defects(graph: DirectedGraph, state: KmsState) -> dict[VertexId, float]:
    """phi(p_v - sum over f in vE^1 of s_f s_f*) for every vertex that is not a source."""
    defects = {}
    for v in graph.vertices:
        incoming = graph.edges_into(v)
        if not incoming:
            continue
        value = state_value(state, SpanningElement(Path.vertex(v), Path.vertex(v)))
        for f in incoming:
            edge_path = Path((f,), f.source)
            value -= state_value(state, SpanningElement(edge_path, edge_path))
        defects[v] = value
    return defects


def ck_states_above_critical(
    graph: DirectedGraph, q: float, tol: float = default_tolerance("admissibility")
) -> list[KmsState]:
    points = ck_simplex_extreme_points(graph, q, tol)
    return [toeplitz_state(graph, q, eps, tol=tol) for eps in points]


def _require_probability(vector: FloatVector, name: str, tol: float) -> None:
    if np.any(vector < -tol):
        raise AdmissibilityError(f"{name} must be nonnegative")
    total = float(vector.sum())
    if abs(total - 1.0) > tol:
        raise AdmissibilityError(f"{name} must sum to 1, got {total:.15g}")


def critical_state_irreducible(
    graph: DirectedGraph, tol: float = default_tolerance("factoring")
) -> KmsState:
    """The unique KMS state at beta = ln rho(A) of a strongly connected graph."""
    if not strongly_connected(graph):
        raise AdmissibilityError("Graph is not strongly connected")
    matrix = vertex_matrix(graph)
    x = perron_vector(matrix).x
    q = critical_q(matrix)
    epsilon = x - q * (matrix.astype(np.float64) @ x)
    return KmsState(
        graph.vertices, q, x, epsilon, StateKind.CRITICAL, _factors(graph, epsilon, tol)
    )


def sources_hypotheses(graph: DirectedGraph) -> str | None:
    """
    Why the sourced critical construction does not apply, or None when it does.

    Requires no sinks and a strongly connected E∖H, H the saturation of the sources.
    """
    if sinks(graph):
        return "graph has sinks: " + ", ".join(graph.ordered(sinks(graph)))
    chain = source_saturation(graph)
    if len(chain.saturation) == len(graph.vertices):
        return "every vertex lies in the saturation of the sources"
    blocks = block_decomposition(graph, chain)
    if not is_irreducible(blocks.complement_block):
        return "the graph outside the saturation of the sources is not strongly connected"
    return None


def critical_state_with_sources(
    graph: DirectedGraph, tol: float = default_tolerance("factoring")
) -> KmsState:
    """
    The unique KMS_{ln rho(A)} state of C*(E) for graphs with sources.

    m is the Perron vector of A_{E∖H} on E∖H and vanishes on H.
    """
    reason = sources_hypotheses(graph)
    if reason is not None:
        raise AdmissibilityError(f"Sourced critical state unavailable: {reason}")

    chain = source_saturation(graph)
    if not chain.saturation:
        return critical_state_irreducible(graph, tol)

    blocks = block_decomposition(graph, chain)
    complement = blocks.complement_block
    x = perron_vector(complement).x
    q = critical_q(complement)

    m = np.zeros(len(graph.vertices))
    for value, v in zip(x, blocks.ordering[: blocks.complement_size], strict=True):
        m[graph.index[v]] = value
    matrix = vertex_matrix(graph)
    epsilon = m - q * (matrix.astype(np.float64) @ m)
    logger.debug("Sourced critical state: |H|=%d, q=%.15g", len(chain.saturation), q)
    return KmsState(
        graph.vertices, q, m, epsilon, StateKind.CUNTZ_KRIEGER, _factors(graph, epsilon, tol)
    )


def critical_state_from_measure(
    graph: DirectedGraph,
    m: ArrayLike | Mapping[VertexId, float],
    *,
    tol: float = default_tolerance("admissibility"),
    probability_tol: float = default_tolerance("probability"),
    factoring_tol: float = default_tolerance("factoring"),
) -> KmsState:
    """A KMS state at beta = ln rho(A) from any probability m with Am <= rho(A)m."""
    measure = vertex_vector(graph, m)
    _require_probability(measure, "m", probability_tol)
    matrix = vertex_matrix(graph)
    if classify_matrix(matrix) is Classification.ZERO:
        raise AdmissibilityError(
            "Graph has no cycles: the critical inverse temperature is -inf"
        )
    q = critical_q(matrix)
    result = check_subinvariant(matrix, measure, q, tol)
    if not result.ok:
        worst = graph.vertices[int(np.argmin(result.slack))]
        raise AdmissibilityError(
            f"m is not subinvariant at q={q:.15g}: (m - qAm) is negative at {worst}"
        )
    epsilon = result.slack
    return KmsState(
        graph.vertices,
        q,
        measure,
        epsilon,
        StateKind.CRITICAL,
        _factors(graph, epsilon, factoring_tol),
    )


def ground_state(
    graph: DirectedGraph,
    epsilon: ArrayLike | Mapping[VertexId, float],
    tol: float = default_tolerance("probability"),
) -> KmsState:
    """The ground state that is epsilon on vertex projections and zero elsewhere."""
    eps = vertex_vector(graph, epsilon)
    _require_probability(eps, "epsilon", tol)
    return KmsState(
        graph.vertices,
        0.0,
        eps.copy(),
        eps,
        StateKind.GROUND,
        _factors(graph, eps, default_tolerance("factoring")),
    )


def kms_infinity_limit(
    graph: DirectedGraph,
    epsilon: ArrayLike | Mapping[VertexId, float],
    betas: Iterable[float],
) -> list[KmsState]:
    """
    KMS_beta states approaching the ground state with vertex values epsilon.

    At each beta the state uses epsilon_v / y_v, which lies on the simplex.
    """
    eps = vertex_vector(graph, epsilon)
    _require_probability(eps, "epsilon", default_tolerance("probability"))
    states = []
    for beta in betas:
        q = Temperature.from_beta(beta).q
        y = y_vector(graph, q)
        states.append(toeplitz_state(graph, q, eps / y))
    return states


@dataclass(frozen=True)
class BetaRangeReport:
    rho: float
    classification: Classification
    critical_beta: float
    all_beta_admissible: bool
    toeplitz_dim: int
    ck_dim: int
    critical_state: str
    ck_states_only_at_critical: bool
    below_critical: str
    summary: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "rho": self.rho,
            "classification": str(self.classification),
            "critical_beta": self.critical_beta,
            "all_beta_admissible": self.all_beta_admissible,
            "toeplitz_dim": self.toeplitz_dim,
            "ck_dim": self.ck_dim,
            "critical_state": self.critical_state,
            "ck_states_only_at_critical": self.ck_states_only_at_critical,
            "below_critical": self.below_critical,
            "summary": self.summary,
        }


def beta_range_report(graph: DirectedGraph) -> BetaRangeReport:
    """Which inverse temperatures carry KMS states, and how many."""
    matrix = vertex_matrix(graph)
    spectrum = spectral_radius(matrix)
    rho = spectrum.rho
    toeplitz_dim = len(graph.vertices) - 1
    ck_dim = len(sources(graph))
    connected = strongly_connected(graph)

    if spectrum.classification is Classification.ZERO:
        return BetaRangeReport(
            rho=0.0,
            classification=spectrum.classification,
            critical_beta=-math.inf,
            all_beta_admissible=True,
            toeplitz_dim=toeplitz_dim,
            ck_dim=ck_dim,
            critical_state="none",
            ck_states_only_at_critical=False,
            below_critical="none",
            summary=f"all beta admissible; simplex dimension {toeplitz_dim}",
        )

    critical_beta = math.log(rho) + 0.0
    if connected or sources_hypotheses(graph) is None:
        critical_state = "unique"
    else:
        critical_state = "exists"
    below = "none" if connected else "not determined"

    summary = f"beta > {critical_beta:.15g}; simplex dimension {toeplitz_dim}; "
    if connected:
        summary += f"unique state at {critical_beta:.15g}, the only KMS state of C*(E); none below"
    elif critical_state == "unique":
        summary += f"unique C*(E) state at {critical_beta:.15g}; below not determined"
    else:
        summary += f"critical states exist at {critical_beta:.15g}; below not determined"

    return BetaRangeReport(
        rho=rho,
        classification=spectrum.classification,
        critical_beta=critical_beta,
        all_beta_admissible=False,
        toeplitz_dim=toeplitz_dim,
        ck_dim=ck_dim,
        critical_state=critical_state,
        ck_states_only_at_critical=connected,
        below_critical=below,
        summary=summary,
    )


def epsilon_points_as_dicts(
    graph: DirectedGraph, points: Sequence[FloatVector]
) -> list[dict[VertexId, float]]:
    return [dict(zip(graph.vertices, map(float, p), strict=True)) for p in points]
