"""Exact statistics and key rates of quantum repeater chains."""

__version__ = "0.1.0"
