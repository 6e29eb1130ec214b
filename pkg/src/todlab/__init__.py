"""Temporal output discrepancy for semi-supervised active learning."""

__version__ = "0.1.0"
