"""Declarative relation-based dimensionality reduction."""

__version__ = "0.1.0"
