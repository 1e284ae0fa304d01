"""Numerical certification of nonuniform exponential dichotomy."""

__version__ = "0.1.0"
