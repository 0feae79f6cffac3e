"""Occlusion-aware facial landmark detection with per-point visibility."""

__version__ = "0.1.0"
