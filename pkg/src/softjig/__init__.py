"""Stamping-depth planning for triangular-pyramid cavities in a jamming soft jig."""

__version__ = "0.1.0"
