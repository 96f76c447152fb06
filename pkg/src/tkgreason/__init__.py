"""Temporal knowledge-graph query answering with feature-logic embeddings."""

from .dsl import parse, registry, structure
from .model import FeatureLogicModel
from .oracle import execute
from .store import TkgStore, load_graph, load_graph_dir

__all__ = [
    "FeatureLogicModel",
    "TkgStore",
    "execute",
    "load_graph",
    "load_graph_dir",
    "parse",
    "registry",
    "structure",
]
__version__ = "0.1.0"
