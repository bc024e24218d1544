"""Unsupervised cross-lingual knowledge-graph alignment toolkit."""

__version__ = "0.1.0"
