"""Depth-assisted 2D-to-3D human pose lifting on synthetic data."""

__version__ = "0.1.0"
