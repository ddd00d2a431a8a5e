"""Underwater-acoustic OFDM link simulation and learned channel estimation."""

__version__ = "0.1.0"
