"""Numerical toolkit for the almost Mathieu operator."""

__version__ = "0.1.0"
