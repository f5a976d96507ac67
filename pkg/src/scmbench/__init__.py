"""Benchmark harness for causal concept-based explanations over simulated text datasets."""

__version__ = "0.1.0"

from .dgp import BUILTIN, load_builtin  # noqa: E402
from .scm import ConceptChange, evaluate, load_graph, validate_graph  # noqa: E402

__all__ = ["BUILTIN", "ConceptChange", "evaluate", "load_builtin", "load_graph", "validate_graph", "__version__"]
