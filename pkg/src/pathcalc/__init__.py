"""Pathwise stochastic calculus and robust hedging along refining partitions."""

__version__ = "0.1.0"
