"""Momentum methods, their continuous-time limits and invariant manifolds."""

__version__ = "0.1.0"
