"""Regularized reconstruction of initial states for backward semilinear parabolic problems."""

__version__ = "0.1.0"
