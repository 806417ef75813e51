"""Aggregating Algorithm for the Brier game on case/control triplets."""

__version__ = "0.1.0"
