"""Thermodynamically consistent stochastic site-graph rewriting."""

__version__ = "0.1.0"
