"""Sparse training by joint weight and mask-score optimization."""

__version__ = "0.1.0"
