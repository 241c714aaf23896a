"""Locally group-invariant feature maps built from orbit kernel embeddings."""

__version__ = "0.1.0"
