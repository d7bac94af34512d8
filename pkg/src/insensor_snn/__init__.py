"""Spiking networks with a first layer computed inside the pixel array."""

__version__ = "0.1.0"
