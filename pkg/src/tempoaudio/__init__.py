"""Timestamp/frequency-controllable audio generation workbench."""

__version__ = "0.1.0"
