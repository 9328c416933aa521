"""Covariance-aware few-shot classification with diverse class prototypes."""

__version__ = "1.0.0"
