"""Numerical laboratory for stable recovery of waveguide potentials from DN data."""

__version__ = "0.1.0"
