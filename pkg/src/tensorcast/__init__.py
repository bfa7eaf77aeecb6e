"""Sparse embedding training primitives, tensor casting, and performance models."""

__version__ = "0.1.0"
