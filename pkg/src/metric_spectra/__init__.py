"""Spectral estimates for the weighted Laplacian on finite metric graphs."""

from .errors import GraphFormatError, GraphValidationError, KernelError, MetricSpectraError, UnderResolvedError
from .graph import (
    Edge, EdgeWeight, GraphDocument, GraphPoint, MetricGraph, Weight, diameter, distance, emit_graph,
    interval_graph, load_graph, parse_graph, path_graph, star_graph, total_length, validate,
)

__version__ = "0.1.0"

__all__ = [
    "Edge", "EdgeWeight", "GraphDocument", "GraphFormatError", "GraphPoint", "GraphValidationError",
    "KernelError", "MetricGraph", "MetricSpectraError", "UnderResolvedError", "Weight", "diameter",
    "distance", "emit_graph", "interval_graph", "load_graph", "parse_graph", "path_graph", "star_graph",
    "total_length", "validate",
]
