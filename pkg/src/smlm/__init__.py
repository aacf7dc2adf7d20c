"""Constrained symbolic music generation with softly masked language models."""

__version__ = "0.1.0"
