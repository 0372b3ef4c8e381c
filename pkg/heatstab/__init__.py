"""Boundary stabilization and observation of the unstable heat equation on a rectangle."""

__version__ = "1.0.0"
