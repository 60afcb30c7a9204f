"""
Spectral radius, classification, Perron vectors and subinvariance for
nonnegative integer matrices.

The spectrum of a block-triangular matrix is the union of the spectra of its
diagonal blocks, so rho(A) is the largest rho(A_C) over the strongly connected
classes C of A. Each A_C + I is primitive, and power iteration on it converges
geometrically even when A itself has Jordan blocks at rho(A).
"""

import logging
from dataclasses import dataclass
try:
    from enum import StrEnum
except ImportError:  # Python < 3.11
    from enum import Enum

    class StrEnum(str, Enum):  # type: ignore[no-redef]
        __str__ = str.__str__
        __format__ = str.__format__

import networkx as nx
import numpy as np
from numpy.typing import ArrayLike, NDArray

from config import default_setting, default_tolerance
from errors import AdmissibilityError, ConvergenceError, ReducibleMatrixError
from graph import DirectedGraph, vertex_matrix

logger = logging.getLogger(__name__)

FloatVector = NDArray[np.float64]


class Classification(StrEnum):
    """Where rho(A) sits relative to 1."""

    ZERO = "Zero"
    ONE = "One"
    AT_LEAST_ONE = "AtLeastOne"
    GREATER_THAN_ONE = "GreaterThanOne"


@dataclass(frozen=True)
class SpectralReport:
    rho: float
    classification: Classification
    iterations: int
    residual: float


@dataclass(frozen=True, eq=False)
class PerronVector:
    """Unimodular Perron eigenvector: x > 0, sum(x) == 1, Ax = rho x."""

    x: FloatVector
    rho: float
    residual: float


@dataclass(frozen=True, eq=False)
class SubinvarianceResult:
    ok: bool
    slack: FloatVector


@dataclass(frozen=True)
class SpectralClass:
    """A nontrivial strongly connected class of A (indices into canonical order)."""

    indices: tuple[int, ...]
    rho: float
    is_cycle: bool
    iterations: int
    residual: float


def _as_square(matrix: ArrayLike) -> NDArray[np.int64]:
    array = np.asarray(matrix)
    if array.ndim != 2 or array.shape[0] != array.shape[1]:
        raise ValueError(f"Expected a square matrix, got shape {array.shape}")
    if np.any(array < 0):
        raise ValueError("Matrix entries must be nonnegative")
    return array


def _support_digraph(matrix: NDArray[np.int64]) -> nx.DiGraph:
    # A(i, j) > 0 means an edge with source j and range i
    digraph = nx.DiGraph()
    digraph.add_nodes_from(range(matrix.shape[0]))
    rows, cols = np.nonzero(matrix)
    digraph.add_edges_from(zip(cols.tolist(), rows.tolist(), strict=True))
    return digraph


def _nontrivial_classes(matrix: NDArray[np.int64]) -> list[tuple[int, ...]]:
    """Classes with more than one vertex, or a single vertex with a loop."""
    classes = []
    for component in nx.strongly_connected_components(_support_digraph(matrix)):
        members = tuple(sorted(component))
        if len(members) > 1 or matrix[members[0], members[0]] > 0:
            classes.append(members)
    return sorted(classes)


def _is_simple_cycle(matrix: NDArray[np.int64], members: tuple[int, ...]) -> bool:
    block = matrix[np.ix_(members, members)]
    return int(block.sum()) == len(members)


def _pattern_power(pattern: NDArray[np.int64], exponent: int) -> NDArray[np.int64]:
    """0/1 support of pattern**exponent, clipped after every product so it stays exact."""
    result = np.eye(pattern.shape[0], dtype=np.int64)
    base = pattern
    while exponent:
        if exponent & 1:
            result = np.minimum(result @ base, 1)
        base = np.minimum(base @ base, 1)
        exponent >>= 1
    return result


def is_nilpotent(matrix: ArrayLike) -> bool:
    """A^n == 0 for n the dimension, checked in exact integer arithmetic."""
    array = _as_square(matrix)
    pattern = (array > 0).astype(np.int64)
    return not np.any(_pattern_power(pattern, array.shape[0]))


def _power_iteration(
    block: NDArray[np.int64],
    max_iterations: int,
    rayleigh_tol: float,
    residual_tol: float,
) -> tuple[float, FloatVector, int, float]:
    """Dominant eigenpair of a nonnegative irreducible block via iteration on block + I."""
    size = block.shape[0]
    dense = block.astype(np.float64)
    shifted = dense + np.eye(size)
    x = np.full(size, 1.0 / size)
    previous = np.inf
    residual = np.inf

    for iteration in range(1, max_iterations + 1):
        z = shifted @ x
        estimate = float(x @ z / (x @ x)) - 1.0
        x = z / z.sum()
        residual = float(np.max(np.abs(dense @ x - estimate * x)))
        settled = abs(estimate - previous) < rayleigh_tol * max(1.0, estimate)
        if settled and residual <= residual_tol:
            return estimate, x, iteration, residual
        previous = estimate

    raise ConvergenceError(
        f"Power iteration did not converge after {max_iterations} iterations "
        f"(last residual {residual:.3e})"
    )


def spectral_classes(
    matrix: ArrayLike,
    *,
    max_iterations: int = default_setting("power_iteration", "max_iterations"),
    rayleigh_tol: float = default_setting("power_iteration", "rayleigh_tol"),
    residual_tol: float = default_tolerance("eigen_residual"),
) -> list[SpectralClass]:
    """Nontrivial classes of A with their spectral radii."""
    array = _as_square(matrix)
    result = []
    for members in _nontrivial_classes(array):
        if _is_simple_cycle(array, members):
            result.append(SpectralClass(members, 1.0, True, 0, 0.0))
            continue
        block = array[np.ix_(members, members)]
        rho, _, iterations, residual = _power_iteration(
            block, max_iterations, rayleigh_tol, residual_tol
        )
        logger.debug("Class %s: rho=%.15g after %d iterations", members, rho, iterations)
        result.append(SpectralClass(members, rho, False, iterations, residual))
    return result


def classify_matrix(matrix: ArrayLike, refine: bool = True) -> Classification:
    """
    Structural classification without floating point.

    No cycles gives Zero. With refine, One when every nontrivial class is a
    simple cycle and GreaterThanOne otherwise; without it, AtLeastOne.
    """
    array = _as_square(matrix)
    classes = _nontrivial_classes(array)
    if not classes:
        return Classification.ZERO
    if not refine:
        return Classification.AT_LEAST_ONE
    if all(_is_simple_cycle(array, members) for members in classes):
        return Classification.ONE
    return Classification.GREATER_THAN_ONE


def classify_graph_spectrum(graph: DirectedGraph) -> Classification:
    return classify_matrix(vertex_matrix(graph))


def consistent_with_rho(
    classification: Classification,
    rho: float,
    tol: float = default_tolerance("classification"),
) -> bool:
    """Whether a classification matches a numeric rho within the classification band."""
    if classification is Classification.ZERO:
        return rho < tol
    if classification is Classification.ONE:
        return abs(rho - 1.0) < tol
    if classification is Classification.GREATER_THAN_ONE:
        return rho > 1.0 + tol
    return rho >= 1.0 - tol


def spectral_radius(
    matrix: ArrayLike,
    *,
    max_iterations: int = default_setting("power_iteration", "max_iterations"),
    rayleigh_tol: float = default_setting("power_iteration", "rayleigh_tol"),
    residual_tol: float = default_tolerance("eigen_residual"),
) -> SpectralReport:
    array = _as_square(matrix)
    if is_nilpotent(array):
        return SpectralReport(0.0, Classification.ZERO, 0, 0.0)

    classes = spectral_classes(
        array,
        max_iterations=max_iterations,
        rayleigh_tol=rayleigh_tol,
        residual_tol=residual_tol,
    )
    dominant = max(classes, key=lambda c: c.rho)
    classification = classify_matrix(array)
    if not consistent_with_rho(classification, dominant.rho):
        logger.warning(
            "Structural classification %s disagrees with numeric rho=%.15g",
            classification,
            dominant.rho,
        )
    return SpectralReport(
        rho=dominant.rho,
        classification=classification,
        iterations=sum(c.iterations for c in classes),
        residual=dominant.residual,
    )


def is_irreducible(matrix: ArrayLike) -> bool:
    array = _as_square(matrix)
    if array.shape[0] == 1:
        return bool(array[0, 0] > 0)
    return bool(nx.is_strongly_connected(_support_digraph(array)))


def perron_vector(
    matrix: ArrayLike,
    *,
    max_iterations: int = default_setting("power_iteration", "max_iterations"),
    rayleigh_tol: float = default_setting("power_iteration", "rayleigh_tol"),
    residual_tol: float = default_tolerance("eigen_residual"),
) -> PerronVector:
    """The unimodular Perron eigenvector of an irreducible matrix."""
    array = _as_square(matrix)
    if not is_irreducible(array):
        raise ReducibleMatrixError("Perron vector requires an irreducible matrix")

    size = array.shape[0]
    if _is_simple_cycle(array, tuple(range(size))):
        return PerronVector(np.full(size, 1.0 / size), 1.0, 0.0)

    rho, x, iterations, residual = _power_iteration(
        array, max_iterations, rayleigh_tol, residual_tol
    )
    if np.min(x) <= 0:
        raise ConvergenceError("Power iteration produced a non-positive Perron vector")
    logger.debug(
        "Perron vector: rho=%.15g after %d iterations (residual %.3e)", rho, iterations, residual
    )
    return PerronVector(x, rho, residual)


def check_subinvariant(
    matrix: ArrayLike,
    m: ArrayLike,
    q: float,
    tol: float = default_tolerance("admissibility"),
) -> SubinvarianceResult:
    """qAm <= m entrywise, up to tol; slack = m - qAm."""
    array = _as_square(matrix)
    measure = np.asarray(m, dtype=np.float64)
    slack = measure - q * (array.astype(np.float64) @ measure)
    return SubinvarianceResult(bool(np.all(slack >= -tol)), slack)


def critical_q(matrix: ArrayLike) -> float:
    """
    q = 1/rho(A) at the critical inverse temperature ln rho(A).

    Exact when the structural classification pins rho to 1.
    """
    array = _as_square(matrix)
    classification = classify_matrix(array)
    if classification is Classification.ZERO:
        raise AdmissibilityError(
            "Graph has no cycles: rho(A) = 0 and the critical inverse temperature is -inf"
        )
    if classification is Classification.ONE:
        return 1.0
    return 1.0 / spectral_radius(array).rho
