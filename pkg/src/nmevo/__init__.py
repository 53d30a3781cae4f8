"""Evolutionary laboratory for neuromodulated learning on a rotated-frame navigation task."""

__version__ = "0.1.0"
