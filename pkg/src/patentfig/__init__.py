"""Corpus engineering and evaluation toolkit for patent-figure description models."""

__version__ = "0.1.0"
