"""Hyperspectral image denoising with a hybrid convolution-attention network."""

__version__ = "0.1.0"
