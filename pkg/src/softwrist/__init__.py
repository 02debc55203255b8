"""Soft-wrist peg-in-hole insertion: simulator, privileged teacher and TCN student."""

__version__ = "0.1.0"
