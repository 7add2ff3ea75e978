"""Egocentric action recognition from hand tracks and object presence."""

__version__ = "0.1.0"
