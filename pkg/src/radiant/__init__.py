"""Depth from multi-view normal and reflectance maps via radiance re-parametrisation."""

__version__ = "0.1.0"
