"""Numerical laboratory for Coulomb gas correlations and SLE martingale observables."""

__version__ = "0.1.0"
