"""Deterministic SVG rendering of the benchmark's tidy figure CSVs."""

__version__ = "0.1.0"

from .render import SCHEMAS, SchemaError, render
