"""LiDAR-guided cross-attention band selection for hyperspectral imagery."""

__version__ = "0.1.0"
