"""Bayesian multidirectional clustering of count tensors."""

__version__ = "0.1.0"
