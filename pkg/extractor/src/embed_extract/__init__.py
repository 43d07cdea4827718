"""Adapters that turn pretrained encoders into PCEM embedding files."""

__version__ = "0.1.0"
