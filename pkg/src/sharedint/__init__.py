"""Deterministic multi-agent simulator of shared intentionality through mimed explanations."""

__version__ = "0.1.0"
