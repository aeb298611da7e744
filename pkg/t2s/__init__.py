"""Text-to-time-series generation."""

__version__ = "0.1.0"
