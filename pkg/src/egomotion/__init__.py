"""Trainable monocular visual ego-motion estimation toolkit."""

__version__ = "0.1.0"
