"""Retrieval, geometric verification, and caption-context toolkit."""

__version__ = "0.1.0"
