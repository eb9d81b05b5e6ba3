"""Cooperative ambient backscatter physical-layer simulator and analysis library."""

__version__ = "0.1.0"
