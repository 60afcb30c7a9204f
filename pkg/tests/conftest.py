"""Shared fixtures for the kmsgraph test suite."""

import json
from collections.abc import Callable
from pathlib import Path

import numpy as np
import pytest
from corpus import (
    chain,
    cuntz,
    loop_with_source,
    single_edge,
    single_loop,
    two_cycle,
)

from graph import DirectedGraph, graph_to_document


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


@pytest.fixture
def loop_graph() -> DirectedGraph:
    return single_loop()


@pytest.fixture
def o2_graph() -> DirectedGraph:
    return cuntz(2)


@pytest.fixture
def edge_graph() -> DirectedGraph:
    return single_edge()


@pytest.fixture
def two_cycle_graph() -> DirectedGraph:
    return two_cycle()


@pytest.fixture
def sourced_graph() -> DirectedGraph:
    return loop_with_source()


@pytest.fixture
def chain_graph() -> DirectedGraph:
    return chain()


@pytest.fixture
def write_graph(tmp_path: Path) -> Callable[[DirectedGraph], str]:
    """Write a graph document to a temporary file and return its path."""

    def _write(graph: DirectedGraph, name: str = "graph.json") -> str:
        path = tmp_path / name
        path.write_text(json.dumps(graph_to_document(graph)), encoding="utf-8")
        return str(path)

    return _write
