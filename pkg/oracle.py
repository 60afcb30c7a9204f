"""
Independent verification of KMS states.

Two evaluation routes are compared:
  - symbolic: the product formula for spanning elements s_mu s_nu*, then the
    closed-form state value;
  - representation: operators Q_v and T_e on l^2 of the paths of length <= N,
    with phi(a) approximated by sum over mu of Delta_mu (a h_mu | h_mu),
    Delta_mu = q^{|mu|} epsilon_{s(mu)}.

The weights sum to 1 over all paths, so 1 minus the partial sum bounds the
truncation error exactly.
"""

import logging
from collections.abc import Iterable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from itertools import product
from typing import Any

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import sparse

from config import default_setting, default_tolerance
from errors import BasisLimitError
from graph import (
    DirectedGraph,
    Path,
    VertexId,
    enumerate_paths_up_to,
    factorize_path,
    vertex_matrix,
)
from kms_states import (
    ZERO,
    KmsState,
    SpanningElement,
    StateKind,
    state_value,
    toeplitz_state,
    vertex_vector,
)

logger = logging.getLogger(__name__)


def multiply_spanning(a: SpanningElement, b: SpanningElement) -> SpanningElement:
    """
    (s_mu s_nu*)(s_alpha s_beta*) by the product formula.

    s_{mu alpha'} s_beta* when alpha = nu alpha', s_mu s_{beta nu'}* when
    nu = alpha nu', and zero otherwise.
    """
    if a.mu is None or a.nu is None or b.mu is None or b.nu is None:
        return ZERO
    mu, nu, alpha, beta = a.mu, a.nu, b.mu, b.nu

    alpha_rest = factorize_path(alpha, nu)
    if alpha_rest is not None:
        return SpanningElement(mu.concat(alpha_rest), beta)
    nu_rest = factorize_path(nu, alpha)
    if nu_rest is not None:
        return SpanningElement(mu, beta.concat(nu_rest))
    return ZERO


def spanning_elements(graph: DirectedGraph, max_length: int) -> list[SpanningElement]:
    """All s_mu s_nu* with s(mu) == s(nu) and |mu|, |nu| <= max_length."""
    by_source: dict[VertexId, list[Path]] = {v: [] for v in graph.vertices}
    for path in enumerate_paths_up_to(graph, max_length):
        by_source[path.source].append(path)
    return [
        SpanningElement(mu, nu)
        for v in graph.vertices
        for mu, nu in product(by_source[v], repeat=2)
    ]


def basis_size(graph: DirectedGraph, depth: int) -> int:
    """|E^{<=depth}|, exactly."""
    matrix = vertex_matrix(graph).astype(object)
    counts = np.ones(len(graph.vertices), dtype=object)
    total = 0
    for _ in range(depth + 1):
        total += int(counts.sum())
        counts = matrix @ counts
    return total


@dataclass(frozen=True, eq=False)
class TruncatedRep:
    """
    Q_v and T_e on l^2(E^{<=N}) as sparse 0/1 matrices.

    T_e h_mu = h_{e mu} when s(e) = r(mu) and |mu| < N, and 0 otherwise.
    """

    graph: DirectedGraph
    depth: int
    basis: tuple[Path, ...]
    position: dict[Path, int]
    projections: dict[VertexId, sparse.csr_matrix]
    isometries: dict[str, sparse.csr_matrix]
    _cache: dict[Path, sparse.csr_matrix] = field(default_factory=dict, repr=False)

    @property
    def dimension(self) -> int:
        return len(self.basis)

    def path_operator(self, path: Path) -> sparse.csr_matrix:
        """T_mu = T_{mu_1} ... T_{mu_n}, or Q_v for a vertex."""
        cached = self._cache.get(path)
        if cached is not None:
            return cached
        if path.is_vertex:
            operator = self.projections[path.at]
        else:
            operator = self.isometries[path.edges[0].id]
            for e in path.edges[1:]:
                operator = operator @ self.isometries[e.id]
            operator = operator.tocsr()
        self._cache[path] = operator
        return operator

    def prepare(self, elements: Iterable[SpanningElement]) -> None:
        """Build T_mu and T_nu for every element so later lookups only read the cache."""
        for element in elements:
            if element.mu is not None and element.nu is not None:
                self.path_operator(element.mu)
                self.path_operator(element.nu)

    def operator(self, element: SpanningElement) -> sparse.csr_matrix:
        """pi(s_mu s_nu*) = T_mu T_nu*."""
        if element.mu is None or element.nu is None:
            return sparse.csr_matrix((self.dimension, self.dimension))
        return (self.path_operator(element.mu) @ self.path_operator(element.nu).T).tocsr()

    def interior(self) -> sparse.csr_matrix:
        """Projection onto span{h_mu : |mu| <= N - 1}."""
        mask = np.array([1.0 if p.length < self.depth else 0.0 for p in self.basis])
        return sparse.diags(mask, format="csr")


def build_truncated_rep(
    graph: DirectedGraph,
    depth: int,
    max_basis: int = default_setting("oracle", "max_basis"),
) -> TruncatedRep:
    if depth < 1:
        raise ValueError(f"Representation depth must be at least 1, got {depth}")
    size = basis_size(graph, depth)
    if size > max_basis:
        raise BasisLimitError(
            f"Depth {depth} needs {size} basis paths, above the cap of {max_basis}"
        )

    basis = tuple(enumerate_paths_up_to(graph, depth))
    position = {p: i for i, p in enumerate(basis)}
    shape = (len(basis), len(basis))

    projections = {}
    for v in graph.vertices:
        rows = [i for i, p in enumerate(basis) if p.range == v]
        data = np.ones(len(rows))
        projections[v] = sparse.csr_matrix((data, (rows, rows)), shape=shape)

    isometries = {}
    for e in graph.edges:
        rows, cols = [], []
        for i, p in enumerate(basis):
            if p.length < depth and p.range == e.source:
                rows.append(position[Path((e,) + p.edges, p.at)])
                cols.append(i)
        isometries[e.id] = sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=shape)

    logger.debug("Truncated representation: depth %d, %d basis paths", depth, len(basis))
    return TruncatedRep(graph, depth, basis, position, projections, isometries)


@dataclass(frozen=True, eq=False)
class WeightVector:
    deltas: NDArray[np.float64]
    tail_mass: float


def weight_vector(
    rep: TruncatedRep,
    q: float,
    epsilon: ArrayLike | Mapping[VertexId, float],
    weight_depth: int | None = None,
) -> WeightVector:
    """Delta_mu = q^{|mu|} epsilon_{s(mu)} on basis paths of length <= weight_depth."""
    eps = vertex_vector(rep.graph, epsilon)
    limit = rep.depth if weight_depth is None else weight_depth
    index = rep.graph.index
    deltas = np.array(
        [q**p.length * eps[index[p.source]] if p.length <= limit else 0.0 for p in rep.basis]
    )
    tail = max(0.0, 1.0 - float(deltas.sum()))
    return WeightVector(deltas, tail)


def auto_depth(
    graph: DirectedGraph,
    q: float,
    epsilon: ArrayLike | Mapping[VertexId, float],
    target: float = default_setting("oracle", "tail_target"),
    max_basis: int = default_setting("oracle", "max_basis"),
    padding: int = 0,
) -> int:
    """
    Smallest N >= 1 with tail mass below target.

    Stops early at the basis cap (counting the padded depth) or when no longer
    paths exist; both are logged.
    """
    eps = vertex_vector(graph, epsilon)
    matrix = vertex_matrix(graph).astype(np.float64)
    reach = eps.copy()
    partial = float(reach.sum())
    depth = 0
    while True:
        depth += 1
        if basis_size(graph, depth + padding) > max_basis:
            if depth == 1:
                raise BasisLimitError(
                    f"Even depth 1 (+{padding} padding) exceeds the basis cap of {max_basis}"
                )
            logger.warning(
                "Basis cap %d reached at depth %d; tail mass %.3e is above the target %.1e",
                max_basis,
                depth - 1,
                1.0 - partial,
                target,
            )
            return depth - 1
        reach = matrix @ reach
        partial += q**depth * float(reach.sum())
        if 1.0 - partial < target:
            logger.debug("Auto depth %d, tail mass %.3e", depth, 1.0 - partial)
            return depth
        if not np.any(reach):
            logger.warning("No paths beyond length %d; tail mass %.3e", depth, 1.0 - partial)
            return depth


@dataclass(frozen=True)
class OracleValue:
    value: float
    error_bound: float


class PathSpaceOracle:
    """
    A truncated representation together with the weights of one state.

    The representation is padded beyond the weight depth so products of
    spanning elements with total creation length <= padding are not truncated.
    """

    def __init__(
        self,
        graph: DirectedGraph,
        q: float,
        epsilon: ArrayLike | Mapping[VertexId, float],
        depth: int,
        *,
        padding: int = 0,
        max_basis: int = default_setting("oracle", "max_basis"),
    ):
        self.graph = graph
        self.q = q
        self.depth = depth
        self.padding = padding
        self.rep = build_truncated_rep(graph, depth + padding, max_basis)
        self.weights = weight_vector(self.rep, q, epsilon, depth)

    @property
    def tail_mass(self) -> float:
        return self.weights.tail_mass

    def value(self, *elements: SpanningElement) -> float:
        """Weighted diagonal sum for the product of the given elements."""
        creation = sum(e.mu.length for e in elements if e.mu is not None)
        if creation > self.padding and len(elements) > 1:
            raise ValueError(
                f"Product creates paths of total length {creation}, above padding {self.padding}"
            )
        operator = self.rep.operator(elements[0])
        for element in elements[1:]:
            operator = operator @ self.rep.operator(element)
        return float(operator.diagonal() @ self.weights.deltas)

    def values(
        self,
        batch: Sequence[Sequence[SpanningElement]],
        parallelism: int = default_setting("oracle", "parallelism"),
    ) -> list[float]:
        """Evaluate a batch of products, in order, on a thread pool."""
        self.rep.prepare(element for elements in batch for element in elements)
        results: list[float] = [0.0] * len(batch)
        with ThreadPoolExecutor(max_workers=max(1, parallelism)) as executor:
            futures = {
                executor.submit(self.value, *elements): i for i, elements in enumerate(batch)
            }
            for future in as_completed(futures):
                results[futures[future]] = future.result()
        return results


def oracle_state_value(
    graph: DirectedGraph,
    q: float,
    epsilon: ArrayLike | Mapping[VertexId, float],
    depth: int,
    element: SpanningElement,
    max_basis: int = default_setting("oracle", "max_basis"),
) -> OracleValue:
    """phi_epsilon(a) from the representation; |value - phi_epsilon(a)| <= error_bound."""
    toeplitz_state(graph, q, epsilon)
    oracle = PathSpaceOracle(graph, q, epsilon, depth, max_basis=max_basis)
    return OracleValue(oracle.value(element), oracle.tail_mass)


@dataclass(frozen=True)
class CheckResult:
    name: str
    deviation: float
    tolerance: float
    count: int

    @property
    def passed(self) -> bool:
        return self.deviation <= self.tolerance

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "deviation": self.deviation,
            "tolerance": self.tolerance,
            "passed": self.passed,
            "count": self.count,
        }


@dataclass(frozen=True)
class VerificationReport:
    checks: tuple[CheckResult, ...]
    depth: int | None = None
    basis_size: int | None = None
    tail_mass: float | None = None
    tail_target: float | None = None

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def tail_target_met(self) -> bool | None:
        """False when the oracle stopped short of its tail target."""
        if self.tail_mass is None or self.tail_target is None:
            return None
        return self.tail_mass < self.tail_target

    def failures(self) -> list[CheckResult]:
        return [c for c in self.checks if not c.passed]

    def check(self, name: str) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def merge(self, *others: "VerificationReport") -> "VerificationReport":
        checks = list(self.checks)
        for other in others:
            checks.extend(other.checks)
        return VerificationReport(
            tuple(checks), self.depth, self.basis_size, self.tail_mass, self.tail_target
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "passed": self.passed,
            "depth": self.depth,
            "basis_size": self.basis_size,
            "tail_mass": self.tail_mass,
            "tail_target": self.tail_target,
            "tail_target_met": self.tail_target_met,
            "checks": [c.to_dict() for c in self.checks],
        }


def _max_abs(matrix: sparse.spmatrix) -> float:
    matrix = sparse.csr_matrix(matrix)
    if matrix.nnz == 0:
        return 0.0
    return float(np.max(np.abs(matrix.data)))


def check_tck_relations(rep: TruncatedRep) -> VerificationReport:
    """
    Toeplitz-Cuntz-Krieger relations on the interior span{h_mu : |mu| <= N - 1}.

    The range projections T_e T_e* are mutually orthogonal and diagonal, so
    Q_v >= sum over all of vE^1 implies the inequality for every subset F.
    """
    interior = rep.interior()
    identity = sparse.identity(rep.dimension, format="csr")

    total = sum((rep.projections[v] for v in rep.graph.vertices), sparse.csr_matrix(identity.shape))
    vertex_dev = _max_abs(total - identity)
    for v in rep.graph.vertices:
        for w in rep.graph.vertices:
            if v != w:
                vertex_dev = max(vertex_dev, _max_abs(rep.projections[v] @ rep.projections[w]))

    isometry_dev = 0.0
    for e in rep.graph.edges:
        t = rep.isometries[e.id]
        defect = (t.T @ t - rep.projections[e.source]) @ interior
        isometry_dev = max(isometry_dev, _max_abs(defect))

    orthogonality_dev = 0.0
    pairs = 0
    for e in rep.graph.edges:
        for f in rep.graph.edges:
            if e.id != f.id:
                pairs += 1
                product_ef = rep.isometries[e.id].T @ rep.isometries[f.id] @ interior
                orthogonality_dev = max(orthogonality_dev, _max_abs(product_ef))

    inequality_dev = 0.0
    for v in rep.graph.vertices:
        gap = rep.projections[v].copy()
        for e in rep.graph.edges_into(v):
            t = rep.isometries[e.id]
            gap = gap - t @ t.T
        gap = sparse.csr_matrix(interior @ gap @ interior)
        off_diagonal = gap - sparse.diags(gap.diagonal(), format="csr")
        lowest = float(np.min(gap.diagonal())) if rep.dimension else 0.0
        inequality_dev = max(inequality_dev, _max_abs(off_diagonal), -lowest)

    return VerificationReport(
        (
            CheckResult("vertex_projections", vertex_dev, 0.0, len(rep.graph.vertices)),
            CheckResult("isometry", isometry_dev, 0.0, len(rep.graph.edges)),
            CheckResult("orthogonality", orthogonality_dev, 0.0, pairs),
            CheckResult("projection_inequality", inequality_dev, 0.0, len(rep.graph.vertices)),
        ),
        depth=rep.depth,
        basis_size=rep.dimension,
    )


def kms_condition_check(
    graph: DirectedGraph,
    q: float,
    epsilon: ArrayLike | Mapping[VertexId, float],
    sample: Iterable[tuple[SpanningElement, SpanningElement]],
    *,
    state: KmsState | None = None,
    oracle: PathSpaceOracle | None = None,
    depth: int | None = None,
    tol: float = default_tolerance("verification"),
    max_basis: int = default_setting("oracle", "max_basis"),
    parallelism: int = default_setting("oracle", "parallelism"),
) -> VerificationReport:
    """
    phi(ab) == q^{deg a} phi(ba), evaluated symbolically and on the representation.

    `state` overrides the state built from (q, epsilon); its m is trusted as
    given, so a state whose m did not come from the resolvent fails the
    oracle-agreement and resolvent checks. For ground states only degree-0
    pairs enter the functional equation.
    """
    if state is None:
        state = toeplitz_state(graph, q, epsilon)
    pairs = list(sample)
    ground = state.kind is StateKind.GROUND

    symbolic_dev = 0.0
    symbolic_count = 0
    kms_pairs = []
    for a, b in pairs:
        if ground and a.degree != 0:
            continue
        lhs = state_value(state, multiply_spanning(a, b))
        rhs = state.q**a.degree * state_value(state, multiply_spanning(b, a))
        symbolic_dev = max(symbolic_dev, abs(lhs - rhs))
        symbolic_count += 1
        kms_pairs.append((a, b))
    checks = [CheckResult("kms_symbolic", symbolic_dev, tol, symbolic_count)]

    if ground:
        elements = {e for pair in pairs for e in pair}
        ground_dev = max(
            (
                abs(state_value(state, e))
                for e in elements
                if e.mu is not None and e.nu is not None and (e.mu.length or e.nu.length)
            ),
            default=0.0,
        )
        checks.append(CheckResult("ground_characterization", ground_dev, tol, len(elements)))
    else:
        matrix = vertex_matrix(graph).astype(np.float64)
        resolvent_dev = float(
            np.max(np.abs(state.m - state.q * (matrix @ state.m) - state.epsilon))
        )
        residual_tol = default_tolerance("eigen_residual")
        checks.append(CheckResult("resolvent_relation", resolvent_dev, residual_tol, 1))

    if oracle is None:
        padding = max(
            (
                sum(e.mu.length for e in pair if e.mu is not None)
                for pair in kms_pairs
            ),
            default=0,
        )
        if depth is None:
            depth = auto_depth(graph, state.q, state.epsilon, max_basis=max_basis, padding=padding)
        oracle = PathSpaceOracle(
            graph, state.q, state.epsilon, depth, padding=padding, max_basis=max_basis
        )
    tail = oracle.tail_mass

    products = list(kms_pairs) + [(b, a) for a, b in kms_pairs]
    oracle_values = oracle.values(products, parallelism)
    forward = oracle_values[: len(kms_pairs)]
    backward = oracle_values[len(kms_pairs) :]

    agreement_dev = 0.0
    kms_oracle_dev = 0.0
    for (a, b), ab_value, ba_value in zip(kms_pairs, forward, backward, strict=True):
        expected_ab = state_value(state, multiply_spanning(a, b))
        expected_ba = state_value(state, multiply_spanning(b, a))
        agreement_dev = max(agreement_dev, abs(ab_value - expected_ab), abs(ba_value - expected_ba))
        scale = state.q**a.degree
        kms_oracle_dev = max(kms_oracle_dev, abs(ab_value - scale * ba_value) / (1.0 + scale))

    checks.append(CheckResult("oracle_agreement", agreement_dev, tail + tol, 2 * len(kms_pairs)))
    checks.append(CheckResult("kms_oracle", kms_oracle_dev, tail + tol, len(kms_pairs)))
    return VerificationReport(
        tuple(checks), depth=oracle.depth, basis_size=oracle.rep.dimension, tail_mass=tail
    )


def cylinder_measure(
    graph: DirectedGraph,
    q: float,
    epsilon: ArrayLike | Mapping[VertexId, float],
    alpha: Path,
    state: KmsState | None = None,
) -> float:
    """mu(Z(alpha)) = q^{|alpha|} m_{s(alpha)}."""
    if state is None:
        state = toeplitz_state(graph, q, epsilon)
    return float(state.q**alpha.length * state.m[graph.index[alpha.source]])


def cylinder_measure_series(oracle: PathSpaceOracle, alpha: Path) -> float:
    """The defining sum of Delta over basis paths extending alpha."""
    return float(
        sum(
            oracle.weights.deltas[i]
            for i, path in enumerate(oracle.rep.basis)
            if factorize_path(path, alpha) is not None
        )
    )


def quasi_invariance_check(
    graph: DirectedGraph,
    q: float,
    epsilon: ArrayLike | Mapping[VertexId, float],
    pairs: Iterable[tuple[Path, Path]],
    *,
    state: KmsState | None = None,
    tol: float = default_tolerance("verification"),
) -> VerificationReport:
    """mu(Z(alpha lambda)) == q^{|alpha|} mu(Z(lambda)) whenever r(lambda) = s(alpha)."""
    if state is None:
        state = toeplitz_state(graph, q, epsilon)
    deviation = 0.0
    count = 0
    for alpha, lam in pairs:
        joined = alpha.concat(lam)
        lhs = cylinder_measure(graph, q, epsilon, joined, state)
        rhs = state.q**alpha.length * cylinder_measure(graph, q, epsilon, lam, state)
        deviation = max(deviation, abs(lhs - rhs))
        count += 1
    return VerificationReport((CheckResult("quasi_invariance", deviation, tol, count),))


def verify_state(
    graph: DirectedGraph,
    q: float,
    epsilon: ArrayLike | Mapping[VertexId, float],
    *,
    state: KmsState | None = None,
    depth: int | None = None,
    tol: float = default_tolerance("verification"),
    probability_tol: float = default_tolerance("probability"),
    tail_target: float = default_setting("oracle", "tail_target"),
    max_basis: int = default_setting("oracle", "max_basis"),
    sample_length: int = default_setting("oracle", "sample_length"),
    parallelism: int = default_setting("oracle", "parallelism"),
) -> VerificationReport:
    """Every check in one report: TCK, KMS, oracle agreement, quasi-invariance, normalization."""
    if state is None:
        state = toeplitz_state(graph, q, epsilon)

    padding = 2 * sample_length
    if depth is None:
        depth = auto_depth(
            graph, state.q, state.epsilon, tail_target, max_basis, padding=padding
        )
    oracle = PathSpaceOracle(
        graph, state.q, state.epsilon, depth, padding=padding, max_basis=max_basis
    )
    elements = spanning_elements(graph, sample_length)
    sample = list(product(elements, repeat=2))
    logger.info(
        "Verifying %s state: depth %d, %d basis paths, %d pairs",
        state.kind,
        depth,
        oracle.rep.dimension,
        len(sample),
    )

    tck = check_tck_relations(oracle.rep)
    kms = kms_condition_check(
        graph,
        state.q,
        state.epsilon,
        sample,
        state=state,
        oracle=oracle,
        tol=tol,
        parallelism=parallelism,
    )

    paths = enumerate_paths_up_to(graph, sample_length)
    cylinder_pairs = [(a, lam) for a in paths for lam in paths if lam.range == a.source]
    quasi = quasi_invariance_check(
        graph, state.q, state.epsilon, cylinder_pairs, state=state, tol=tol
    )

    total = float(state.m.sum())
    lowest = min(float(state.m.min()), float(state.epsilon.min()))
    basic = VerificationReport(
        (
            CheckResult("normalization", abs(total - 1.0), probability_tol, 1),
            CheckResult("positivity", max(0.0, -lowest), probability_tol, 2 * len(graph.vertices)),
        ),
        depth=depth,
        basis_size=oracle.rep.dimension,
        tail_mass=oracle.tail_mass,
        tail_target=tail_target,
    )
    return basic.merge(tck, kms, quasi)
