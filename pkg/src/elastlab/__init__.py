"""Numerical laboratory for local elasticity (S_rel) of gradient training dynamics."""
__version__ = "0.1.0"
