"""Doubly robust likelihood-ratio inference for a monotone dose-response curve."""

__version__ = "0.1.0"
