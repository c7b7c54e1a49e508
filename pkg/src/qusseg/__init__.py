"""Entropy parametric imaging of ultrasound RF data and attention U-Net segmentation."""

__version__ = "0.1.0"
