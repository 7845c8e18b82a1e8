"""MMVP - motion-matrix video prediction with a small numpy autodiff core."""

__version__ = "0.1.0"
