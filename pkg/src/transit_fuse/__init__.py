"""Fusion of sampled smartphone travel traces with automatic passenger counts."""

__version__ = "0.1.0"
