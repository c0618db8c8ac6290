"""Numerical laboratory for projective cocycles over geodesic flows of cusped hyperbolic surfaces."""

__version__ = "0.1.0"
