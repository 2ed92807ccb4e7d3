"""Hybrid high-order solvers for 3D magnetostatics on polyhedral meshes."""

__version__ = "0.1.0"
