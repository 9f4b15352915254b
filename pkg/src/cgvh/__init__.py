"""Exact linear model of a passive multilayer diffractive classifier."""
__version__ = "0.1.0"
