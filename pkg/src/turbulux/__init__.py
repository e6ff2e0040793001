"""Circular-beam transmittance distributions for turbulent free-space channels."""

__version__ = "0.1.0"
