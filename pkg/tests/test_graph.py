"""
Tests for graph.py - graph documents, paths, connectivity and the source saturation.
"""

import json

import numpy as np
import pytest
from corpus import (
    all_multigraphs,
    all_simple_graphs,
    chain,
    corpus,
    cuntz,
    cycle,
    edgeless_vertex,
    graphs,
    isolated,
    loop_with_source,
    make_graph,
    single_edge,
    single_loop,
    two_cycle,
)
from hypothesis import given, settings

import graph as graph_module
from errors import GraphParseError
from graph import (
    Path,
    block_decomposition,
    count_paths,
    enumerate_paths,
    enumerate_paths_up_to,
    factorize_path,
    graph_to_document,
    has_cycle,
    is_hereditary,
    is_saturated,
    load_graph,
    parse_graph,
    sinks,
    source_saturation,
    sources,
    strongly_connected,
    strongly_connected_components,
    subgraph_without,
    vertex_matrix,
)


def reaches_everywhere(matrix: np.ndarray) -> bool:
    """Every ordered pair joined by a path of length 1..n, from matrix powers."""
    n = matrix.shape[0]
    reach = np.zeros_like(matrix)
    power = np.eye(n, dtype=matrix.dtype)
    for _ in range(n):
        power = power @ matrix
        reach = reach + power
    return bool(np.all(reach > 0))


class TestParseGraph:
    """Test graph document parsing."""

    def test_loop_document(self) -> None:
        """Test the smallest cyclic graph parses."""
        graph = parse_graph(
            '{"vertices":["v"],"edges":[{"id":"e","range":"v","source":"v"}]}'
        )
        assert graph.vertices == ("v",)
        assert len(graph.edges) == 1
        assert graph.edge("e").range == "v"

    def test_mapping_document(self) -> None:
        """Test a decoded mapping is accepted as well as JSON text."""
        graph = parse_graph({"vertices": ["v", "w"], "edges": []})
        assert graph.vertices == ("v", "w")
        assert graph.edges == ()

    def test_dangling_endpoint(self) -> None:
        """Test an undeclared source is reported as a dangling endpoint."""
        document = {"vertices": ["v"], "edges": [{"id": "e", "range": "v", "source": "x"}]}
        with pytest.raises(GraphParseError, match="dangling endpoint"):
            parse_graph(document)

    def test_duplicate_vertex(self) -> None:
        """Test duplicate vertex ids are rejected."""
        with pytest.raises(GraphParseError, match="Duplicate vertex"):
            parse_graph({"vertices": ["v", "v"], "edges": []})

    def test_duplicate_edge(self) -> None:
        """Test duplicate edge ids are rejected."""
        document = {
            "vertices": ["v"],
            "edges": [
                {"id": "e", "range": "v", "source": "v"},
                {"id": "e", "range": "v", "source": "v"},
            ],
        }
        with pytest.raises(GraphParseError, match="Duplicate edge"):
            parse_graph(document)

    def test_malformed_json(self) -> None:
        """Test broken JSON becomes a GraphParseError."""
        with pytest.raises(GraphParseError, match="malformed"):
            parse_graph('{"vertices": [')

    def test_schema_violation(self) -> None:
        """Test unknown keys fail schema validation."""
        with pytest.raises(GraphParseError, match="invalid graph document"):
            parse_graph({"vertices": ["v"], "edges": [], "weights": {}})

    def test_error_exit_code(self) -> None:
        """Test parse errors map to exit code 2."""
        assert GraphParseError.exit_code == 2

    def test_load_graph_missing_file(self, tmp_path) -> None:
        """Test an unreadable file is a parse error."""
        with pytest.raises(GraphParseError, match="Cannot read"):
            load_graph(str(tmp_path / "missing.json"))

    def test_load_graph_round_trip(self, write_graph) -> None:
        """Test a written document loads back to the same graph."""
        graph = chain()
        assert load_graph(write_graph(graph)) == graph

    def test_document_preserves_order(self) -> None:
        """Test declaration order survives serialization."""
        graph = two_cycle()
        document = graph_to_document(graph)
        assert document["vertices"] == ["u", "v"]
        assert [e["id"] for e in document["edges"]] == ["e1", "e2"]
        assert parse_graph(json.dumps(document)) == graph


class TestVertexMatrix:
    """Test A(v, w) = |vE^1w|."""

    def test_two_loops(self) -> None:
        """Test 1 vertex with 2 loops gives [[2]]."""
        assert vertex_matrix(cuntz(2)).tolist() == [[2]]

    def test_single_edge(self) -> None:
        """Test edge e with r=v, s=w gives one off-diagonal entry."""
        assert vertex_matrix(single_edge()).tolist() == [[0, 1], [0, 0]]

    def test_two_cycle(self) -> None:
        """Test the 2-cycle gives the swap matrix."""
        assert vertex_matrix(two_cycle()).tolist() == [[0, 1], [1, 0]]

    def test_integer_dtype(self) -> None:
        """Test the matrix is exact integer."""
        assert vertex_matrix(chain()).dtype == np.int64


class TestPaths:
    """Test path composition and enumeration."""

    def test_single_loop_length_three(self) -> None:
        """Test the unique path of length 3 on a loop."""
        paths = enumerate_paths(single_loop(), 3)
        assert [str(p) for p in paths] == ["eee"]

    def test_two_loops_length_two(self) -> None:
        """Test 2 loops give 4 paths of length 2 in lexicographic edge order."""
        paths = enumerate_paths(cuntz(2), 2)
        assert [str(p) for p in paths] == ["e1e1", "e1e2", "e2e1", "e2e2"]

    def test_edgeless_vertex(self) -> None:
        """Test no paths of length 1 without edges."""
        assert enumerate_paths(edgeless_vertex(), 1) == []

    def test_length_zero_in_canonical_order(self) -> None:
        """Test vertex paths follow declaration order."""
        paths = enumerate_paths(chain(), 0)
        assert [p.at for p in paths] == ["w", "u", "v"]
        assert all(p.is_vertex for p in paths)

    def test_chain_paths(self) -> None:
        """Test paths compose right to left along w -> u -> v."""
        graph = chain()
        assert [str(p) for p in enumerate_paths(graph, 1)] == ["a", "b"]
        (path,) = enumerate_paths(graph, 2)
        assert str(path) == "ba"
        assert path.range == "v"
        assert path.source == "w"
        assert enumerate_paths(graph, 3) == []

    def test_restricted_to_source(self) -> None:
        """Test `at` keeps only paths with that source."""
        graph = loop_with_source()
        paths = enumerate_paths(graph, 2, at="w")
        assert [str(p) for p in paths] == ["ef"]
        assert all(p.source == "w" for p in paths)

    def test_negative_length(self) -> None:
        """Test negative lengths are rejected."""
        with pytest.raises(ValueError):
            enumerate_paths(single_loop(), -1)

    def test_unknown_vertex(self) -> None:
        """Test an unknown source vertex is rejected."""
        with pytest.raises(ValueError, match="Unknown vertex"):
            enumerate_paths(single_loop(), 1, at="x")

    @pytest.mark.parametrize("name,graph", corpus())
    def test_counts_match_matrix_powers(self, name, graph) -> None:
        """Test |vE^n w| equals A^n(v, w) for n <= 6."""
        matrix = vertex_matrix(graph)
        for n in range(7):
            expected = np.linalg.matrix_power(matrix, n)
            counts = np.zeros_like(matrix)
            for path in enumerate_paths(graph, n):
                counts[graph.index[path.range], graph.index[path.source]] += 1
            assert np.array_equal(counts, expected), f"{name}, n={n}"
            assert count_paths(graph, n) == int(expected.sum())

    @given(graphs(max_vertices=4, max_edges=6))
    @settings(max_examples=100, deadline=None)
    def test_counts_match_on_random_graphs(self, graph) -> None:
        """Test the path count identity on random multigraphs."""
        matrix = vertex_matrix(graph)
        for n in range(5):
            expected = np.linalg.matrix_power(matrix, n)
            counts = np.zeros_like(matrix)
            for path in enumerate_paths(graph, n):
                counts[graph.index[path.range], graph.index[path.source]] += 1
            assert np.array_equal(counts, expected)

    def test_up_to_orders_by_length(self) -> None:
        """Test E^{<=n} lists shorter paths first."""
        paths = enumerate_paths_up_to(single_loop(), 2)
        assert [str(p) for p in paths] == ["v", "e", "ee"]

    def test_concat(self) -> None:
        """Test mu nu needs s(mu) = r(nu)."""
        graph = chain()
        b, a = graph.path("b"), graph.path("a")
        assert str(b.concat(a)) == "ba"
        assert b.concat(Path.vertex("u")) == b
        assert Path.vertex("v").concat(b) == b
        with pytest.raises(ValueError, match="Cannot compose"):
            a.concat(b)

    def test_invalid_edge_sequence(self) -> None:
        """Test non-composable edges cannot form a path."""
        graph = chain()
        with pytest.raises(ValueError, match="do not compose"):
            graph.path(["a", "b"])

    def test_path_from_spec(self) -> None:
        """Test vertex ids, edge ids and edge lists all build paths."""
        graph = loop_with_source()
        assert graph.path("v").is_vertex
        assert graph.path("f").length == 1
        assert str(graph.path(["e", "e", "f"])) == "eef"


class TestSourcesAndSinks:
    """Test sources (no incoming edges) and sinks (no outgoing edges)."""

    def test_single_edge(self) -> None:
        """Test edge w -> v has source w and sink v."""
        graph = single_edge()
        assert sources(graph) == {"w"}
        assert sinks(graph) == {"v"}

    def test_single_loop(self) -> None:
        """Test a loop has neither."""
        assert sources(single_loop()) == frozenset()
        assert sinks(single_loop()) == frozenset()

    def test_edgeless_vertex(self) -> None:
        """Test an isolated vertex is both."""
        assert sources(edgeless_vertex()) == {"v"}
        assert sinks(edgeless_vertex()) == {"v"}


class TestConnectivity:
    """Test strong connectivity, components and cycles."""

    def test_two_cycle(self) -> None:
        """Test the 2-cycle is strongly connected."""
        assert strongly_connected(two_cycle())

    def test_single_edge(self) -> None:
        """Test a single edge is not."""
        assert not strongly_connected(single_edge())

    def test_single_loopless_vertex(self) -> None:
        """Test a lone vertex without a loop is not strongly connected."""
        assert not strongly_connected(edgeless_vertex())
        assert strongly_connected(single_loop())

    def test_components_in_canonical_order(self) -> None:
        """Test SCCs are listed by their first vertex."""
        components = strongly_connected_components(chain())
        assert components == [{"w"}, {"u"}, {"v"}]
        assert strongly_connected_components(cycle(3)) == [{"v0", "v1", "v2"}]

    def test_has_cycle(self) -> None:
        """Test loops count as cycles."""
        assert has_cycle(single_loop())
        assert has_cycle(two_cycle())
        assert not has_cycle(chain())
        assert not has_cycle(isolated(2))

    def test_matches_brute_force_small(self) -> None:
        """Test against matrix-power reachability on all graphs with 3 vertices and <= 4 edges."""
        for graph in all_multigraphs(3, 4):
            assert strongly_connected(graph) == reaches_everywhere(vertex_matrix(graph))

    @pytest.mark.slow
    def test_matches_brute_force_four_vertices(self) -> None:
        """Test against matrix-power reachability on all simple graphs with 4 vertices."""
        for graph in all_simple_graphs(4, 6):
            assert strongly_connected(graph) == reaches_everywhere(vertex_matrix(graph))

    @given(graphs(max_vertices=4, max_edges=6))
    @settings(max_examples=200, deadline=None)
    def test_matches_brute_force_multigraphs(self, graph) -> None:
        """Test against matrix-power reachability on random multigraphs."""
        assert strongly_connected(graph) == reaches_everywhere(vertex_matrix(graph))


class TestSourceSaturation:
    """Test the saturation chain S_0 ⊆ S_1 ⊆ ... of the sources."""

    def test_single_loop(self) -> None:
        """Test no sources gives an empty saturation."""
        assert source_saturation(single_loop()).saturation == frozenset()

    def test_loop_with_source(self) -> None:
        """Test the chain stabilizes at S_0 = {w}."""
        chain_ = source_saturation(loop_with_source())
        assert chain_.levels == (frozenset({"w"}),)
        assert chain_.saturation == {"w"}

    def test_chain(self) -> None:
        """Test w -> u -> v saturates one vertex per level."""
        chain_ = source_saturation(chain())
        assert chain_.levels == (
            frozenset({"w"}),
            frozenset({"w", "u"}),
            frozenset({"w", "u", "v"}),
        )

    @given(graphs(max_vertices=4, max_edges=6))
    @settings(max_examples=200, deadline=None)
    def test_saturation_is_fixed_point(self, graph) -> None:
        """Test H is saturated, hereditary and contains the sources."""
        saturation = source_saturation(graph).saturation
        assert sources(graph) <= saturation
        assert is_saturated(graph, saturation)
        assert is_hereditary(graph, saturation)

    def test_levels_increase(self) -> None:
        """Test each level strictly contains the previous one."""
        for graph in all_multigraphs(3, 3):
            levels = source_saturation(graph).levels
            for lower, upper in zip(levels, levels[1:], strict=False):
                assert lower < upper

    def test_rejects_non_hereditary_result(self, monkeypatch) -> None:
        """Test a closure step that skips a vertex is caught before H is returned."""
        monkeypatch.setattr(graph_module, "_saturate_step", lambda _graph, current: current | {"v"})
        with pytest.raises(RuntimeError, match="hereditary"):
            source_saturation(chain())


class TestBlockDecomposition:
    """Test the reordering [[A_{E∖H}, B], [0, A_H]]."""

    def test_empty_saturation(self) -> None:
        """Test H = ∅ leaves A unchanged with empty B and A_H."""
        graph = two_cycle()
        blocks = block_decomposition(graph, source_saturation(graph))
        assert np.array_equal(blocks.complement_block, vertex_matrix(graph))
        assert blocks.coupling_block.shape == (2, 0)
        assert blocks.saturated_block.shape == (0, 0)

    def test_loop_with_source(self) -> None:
        """Test H = {w} gives [[1]], [[1]], [[0]]."""
        graph = loop_with_source()
        blocks = block_decomposition(graph, {"w"})
        assert blocks.ordering == ("v", "w")
        assert blocks.complement_block.tolist() == [[1]]
        assert blocks.coupling_block.tolist() == [[1]]
        assert blocks.saturated_block.tolist() == [[0]]

    def test_chain_fully_saturated(self) -> None:
        """Test H = E^0 gives an empty complement and strictly upper triangular A_H."""
        graph = chain()
        blocks = block_decomposition(graph, source_saturation(graph))
        assert blocks.complement_size == 0
        assert blocks.ordering == ("v", "u", "w")
        assert blocks.saturated_block.tolist() == [[0, 1, 0], [0, 0, 1], [0, 0, 0]]

    def test_rejects_non_saturation(self) -> None:
        """Test a vertex set other than the saturation is refused."""
        with pytest.raises(ValueError, match="not the saturation"):
            block_decomposition(loop_with_source(), {"v"})

    def test_invariants_exhaustive(self) -> None:
        """Test the lower-left block and the lower triangle of A_H vanish on small graphs."""
        for graph in all_multigraphs(3, 4):
            blocks = block_decomposition(graph, source_saturation(graph))
            k = blocks.complement_size
            assert not np.any(blocks.matrix[k:, :k])
            assert not np.any(np.tril(blocks.saturated_block))
            assert sorted(blocks.ordering) == sorted(graph.vertices)

    def test_subgraph_without_saturation(self) -> None:
        """Test E∖H keeps only the loop outside H = {w}."""
        rest = subgraph_without(loop_with_source(), {"w"})
        assert rest.vertices == ("v",)
        assert [e.id for e in rest.edges] == ["e"]

    def test_subgraph_without_everything(self) -> None:
        """Test removing every vertex is an error."""
        with pytest.raises(ValueError):
            subgraph_without(chain(), {"w", "u", "v"})


class TestFactorizePath:
    """Test the extension test lam = mu lam'."""

    def test_prefix(self) -> None:
        """Test ee = e·e."""
        graph = single_loop()
        rest = factorize_path(graph.path(["e", "e"]), graph.path("e"))
        assert rest == graph.path("e")

    def test_distinct_loops(self) -> None:
        """Test e does not extend f."""
        graph = cuntz(2)
        assert factorize_path(graph.path("e1"), graph.path("e2")) is None

    def test_vertex_by_vertex(self) -> None:
        """Test v = v·v."""
        v = Path.vertex("v")
        assert factorize_path(v, v) == v

    def test_vertex_prefix_needs_matching_range(self) -> None:
        """Test a vertex extends exactly the paths with that range."""
        graph = chain()
        ba = graph.path(["b", "a"])
        assert factorize_path(ba, Path.vertex("v")) == ba
        assert factorize_path(ba, Path.vertex("w")) is None

    def test_longer_prefix(self) -> None:
        """Test a prefix longer than the path never factors."""
        graph = single_loop()
        assert factorize_path(graph.path("e"), graph.path(["e", "e"])) is None

    def test_full_path_leaves_source(self) -> None:
        """Test lam = lam·s(lam)."""
        graph = chain()
        ba = graph.path(["b", "a"])
        assert factorize_path(ba, ba) == Path.vertex("w")


def test_make_graph_rejects_unknown_range() -> None:
    """Test the builder shares the dangling-endpoint check."""
    with pytest.raises(GraphParseError, match="dangling endpoint"):
        make_graph(["v"], [("e", "x", "v")])
