"""Lifetime-value modeling by per-price transaction-count decomposition."""

__version__ = "0.1.0"
