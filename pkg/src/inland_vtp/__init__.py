"""Discharge-aware trajectory prediction for inland vessels."""

__version__ = "0.1.0"
