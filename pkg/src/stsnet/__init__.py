"""Dual-stream convolutional classification of structured time series."""

__version__ = "0.1.0"
