"""Synthetic control arms for censored time-to-event trials."""

__version__ = "0.1.0"
