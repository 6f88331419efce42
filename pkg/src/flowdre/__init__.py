"""Flow-guided density-ratio learning for low-dimensional toy problems."""

__version__ = "0.1.0"
