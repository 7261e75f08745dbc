"""Magnetic Schroedinger inverse-problem laboratory."""

__version__ = "0.1.0"
