"""Isometric MPS phase discriminators, from training data to compiled circuits."""

__version__ = "0.1.0"
