"""Inductive artist-similarity learning on relationship graphs."""

__version__ = "0.1.0"
