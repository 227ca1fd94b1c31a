"""Biased random walk among heavy-tailed random conductances."""

__version__ = "0.1.0"
