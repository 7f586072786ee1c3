"""Automatic human matting: synthetic data, trimap and matting networks, training, metrics."""

__version__ = "0.1.0"
