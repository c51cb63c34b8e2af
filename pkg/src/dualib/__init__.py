"""Dual-library program synthesis loop: solve, abstract, merge, repeat."""

__version__ = "0.1.0"
