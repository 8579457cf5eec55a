"""Finite-volume miscible displacement with measure-valued wells."""

__version__ = "0.1.0"
