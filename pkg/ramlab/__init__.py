"""Robust adaptive Metropolis sampling and its verification toolkit."""

__version__ = "0.1.0"
