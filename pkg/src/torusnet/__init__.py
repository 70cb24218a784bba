"""Flit-level simulator of a torus interconnect with link compression and network fences."""

__version__ = "0.1.0"
