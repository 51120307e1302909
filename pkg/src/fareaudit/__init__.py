"""Audit opaque fare and wage algorithms via surrogate models."""
__version__ = "0.1.0"
