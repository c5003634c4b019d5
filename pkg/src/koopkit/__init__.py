"""Koopman operator learning (DMD, eDMD, HAVOK) and Koopman model predictive control."""

__version__ = "0.1.0"
