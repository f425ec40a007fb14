"""Conditional diffusion for real-time listener facial-motion generation."""
__version__ = "0.1.0"
