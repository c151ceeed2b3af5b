"""Plane-family plurisubharmonic calculus: cones, boundaries, charts and lattice schemes."""

__version__ = "0.1.0"
