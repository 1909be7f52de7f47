"""Causal time-series domain generalization for two-vehicle intention prediction."""

__version__ = "0.1.0"
