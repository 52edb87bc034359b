"""Detector-based measurement updates for a real scalar quantum field."""

__version__ = "0.1.0"
