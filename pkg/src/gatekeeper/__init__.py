"""Tiered stewardship gateway for pathogen dataset descriptors."""

__version__ = "0.1.0"
