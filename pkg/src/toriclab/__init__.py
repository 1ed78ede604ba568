"""Numerical laboratory for the Abreu equation on toric surfaces."""

__version__ = "0.1.0"
