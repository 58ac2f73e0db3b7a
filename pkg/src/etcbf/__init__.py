"""Event-triggered HOCBF safety control for plants with unknown dynamics."""

__version__ = "0.1.0"
