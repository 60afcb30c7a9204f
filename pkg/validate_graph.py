"""
Graph document validation.
Validates parsed JSON against graph_schema.json before the graph is built.
"""

import json
import os
from typing import Any

from jsonschema import Draft7Validator


def load_schema() -> dict[str, Any]:
    """Load the graph JSON schema."""
    schema_path = os.path.join(os.path.dirname(__file__), "graph_schema.json")
    with open(schema_path, encoding="utf-8") as f:
        schema: dict[str, Any] = json.load(f)
    return schema


def validate_graph_document(
    document: Any, schema_path: str | None = None
) -> tuple[bool, list[str]]:
    """
    Validate a graph document against the schema.

    Args:
        document: The decoded JSON document
        schema_path: Optional path to schema file (uses default if not provided)

    Returns:
        Tuple of (is_valid, errors) where errors is a list of error messages
    """
    if schema_path:
        with open(schema_path, encoding="utf-8") as f:
            schema = json.load(f)
    else:
        schema = load_schema()

    validator = Draft7Validator(schema)
    errors = []
    ordered = sorted(validator.iter_errors(document), key=lambda e: [str(p) for p in e.path])
    for error in ordered:
        path = ".".join(str(p) for p in error.path) if error.path else "root"
        errors.append(f"{path}: {error.message}")

    return (len(errors) == 0, errors)

