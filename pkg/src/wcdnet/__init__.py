"""Weakly supervised change segmentation and classification of image pairs."""

__version__ = "0.1.0"
