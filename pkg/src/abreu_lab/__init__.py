"""Numerical lab for the generalized Abreu equation on Delzant polygons."""

__version__ = "0.1.0"
