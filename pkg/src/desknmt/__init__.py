"""Desk-scale denoising + translation pretraining for low-resource MT."""

__version__ = "0.1.0"
