"""Causal retrieval-augmented generation engine: graph curation,
conditional-independence pruning, and causally reranked retrieval."""

__version__ = "0.1.0"
