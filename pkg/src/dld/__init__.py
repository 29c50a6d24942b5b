"""Estimation of the selected arm's mean in two-stage drop-the-losers trials."""

__version__ = "0.1.0"
