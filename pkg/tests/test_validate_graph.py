"""Tests for graph document validation."""

from validate_graph import load_schema, validate_graph_document


class TestValidateGraphDocument:
    """Test graph documents against the JSON schema."""

    def test_valid_loop_graph(self):
        """Test the smallest cyclic graph."""
        document = {"vertices": ["v"], "edges": [{"id": "e", "range": "v", "source": "v"}]}
        is_valid, errors = validate_graph_document(document)
        assert is_valid
        assert len(errors) == 0

    def test_valid_edgeless_graph(self):
        """Test a graph with no edges."""
        is_valid, errors = validate_graph_document({"vertices": ["v"], "edges": []})
        assert is_valid
        assert errors == []

    def test_missing_vertices(self):
        """Test validation fails when vertices are missing."""
        is_valid, errors = validate_graph_document({"edges": []})
        assert not is_valid
        assert any("vertices" in error for error in errors)

    def test_empty_vertex_list(self):
        """Test at least one vertex is required."""
        is_valid, errors = validate_graph_document({"vertices": [], "edges": []})
        assert not is_valid
        assert errors[0].startswith("vertices")

    def test_empty_vertex_id(self):
        """Test vertex ids must be nonempty strings."""
        is_valid, errors = validate_graph_document({"vertices": [""], "edges": []})
        assert not is_valid

    def test_unknown_top_level_key(self):
        """Test unknown keys are rejected."""
        document = {"vertices": ["v"], "edges": [], "name": "loop"}
        is_valid, errors = validate_graph_document(document)
        assert not is_valid
        assert any("root" in error for error in errors)

    def test_unknown_edge_key(self):
        """Test unknown keys inside an edge are rejected."""
        document = {
            "vertices": ["v"],
            "edges": [{"id": "e", "range": "v", "source": "v", "weight": 2}],
        }
        is_valid, errors = validate_graph_document(document)
        assert not is_valid
        assert any(error.startswith("edges.0") for error in errors)

    def test_edge_missing_source(self):
        """Test every edge needs id, range and source."""
        document = {"vertices": ["v"], "edges": [{"id": "e", "range": "v"}]}
        is_valid, errors = validate_graph_document(document)
        assert not is_valid
        assert any("source" in error for error in errors)

    def test_non_string_vertex(self):
        """Test numeric vertex ids are rejected."""
        is_valid, _ = validate_graph_document({"vertices": [1], "edges": []})
        assert not is_valid

    def test_non_object_document(self):
        """Test a JSON array is not a graph document."""
        is_valid, errors = validate_graph_document(["v"])
        assert not is_valid
        assert errors[0].startswith("root")

    def test_schema_loads(self):
        """Test the bundled schema is draft-07 and closed."""
        schema = load_schema()
        assert "draft-07" in schema["$schema"]
        assert schema["additionalProperties"] is False
