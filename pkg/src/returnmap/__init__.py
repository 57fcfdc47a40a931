"""Parameter identification for chaotic systems from pixelized return maps."""

__version__ = "0.1.0"
