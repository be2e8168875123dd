"""Denoised absolute/relative time-cycle modeling for CTR prediction."""

__version__ = "0.1.0"
