"""Tracking by colorization: a softmax pointer learned from gray video."""

__version__ = "0.1.0"
