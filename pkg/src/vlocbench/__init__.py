"""Closed-loop navigation benchmark for visual localization over a
synthetic landmark world."""

__version__ = "0.1.0"
