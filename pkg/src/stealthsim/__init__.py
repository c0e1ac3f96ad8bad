"""Stealthy sensing-attack simulation and stealthiness analysis for perception-based control loops."""

__version__ = "0.1.0"
