"""Explanation agreement versus model quality across training epochs."""

__version__ = "0.1.0"
