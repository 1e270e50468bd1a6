"""Learnable graph token lists and the hop-contribution theory of fixed templates."""

__version__ = "0.1.0"
