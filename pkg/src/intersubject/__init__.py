"""Inter-subject analysis of Gaussian graphical models."""

__version__ = "0.1.0"
