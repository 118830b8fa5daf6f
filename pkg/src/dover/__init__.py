"""Disentangled aesthetic/technical video quality evaluation at desk scale."""

__version__ = "0.1.0"


class DoverError(Exception):
    """Base class for errors raised by this package."""
