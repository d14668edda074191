"""Plane-like minimizers of phase-transition energies on the Heisenberg group."""

__version__ = "0.1.0"
