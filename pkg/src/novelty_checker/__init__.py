"""Retrieval-augmented novelty assessment for research ideas."""

__version__ = "0.1.0"
