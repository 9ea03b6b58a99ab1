"""Fay-Herriot small-area estimation with adjusted likelihood variance estimators."""

__version__ = "0.1.0"
