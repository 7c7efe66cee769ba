"""Numerical laboratory for thermalization of kinetically constrained spin chains."""

__version__ = "0.1.0"
