"""Encrypted smartphone traffic classification and user trait profiling."""

__version__ = "0.1.0"
