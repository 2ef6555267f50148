"""Numerical continuity equation for Hermitian metrics on flat complex tori."""

__version__ = "0.1.0"
