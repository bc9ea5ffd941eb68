"""Scene-text-aware extremely low-light image enhancement toolkit."""

__version__ = "0.1.0"
