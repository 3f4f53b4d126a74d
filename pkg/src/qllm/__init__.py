"""Hybrid circuit x MPO x circuit factorization of dense weight matrices."""

__version__ = "0.1.0"
