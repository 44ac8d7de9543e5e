"""Pseudomodal-energy features and Takagi-Sugeno neuro-fuzzy fault classification."""

__version__ = "0.1.0"
