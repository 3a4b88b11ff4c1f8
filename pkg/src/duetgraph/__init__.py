"""Dual-pathway knowledge-graph completion with coarse-to-fine inference."""

__version__ = "0.1.0"
