"""Ego-graph transformer for node classification."""

__version__ = "0.1.0"
