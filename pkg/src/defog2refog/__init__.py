"""Unpaired single-image fog removal with a physics-embedded refog cycle."""

__version__ = "0.1.0"
