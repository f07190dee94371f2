"""Numerical laboratory for the renormalised stochastic Allen-Cahn equation."""

__version__ = "0.1.0"
