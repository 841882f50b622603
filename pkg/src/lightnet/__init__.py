"""Additive-decay linear attention: recurrence theory, scan kernels,
multi-dimensional positional encodings and a desk-scale model."""

__version__ = "0.1.0"
