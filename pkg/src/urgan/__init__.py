"""Uncertainty-aware conditional GAN with an adaptive generalized-Gaussian loss."""

__version__ = "0.1.0"
