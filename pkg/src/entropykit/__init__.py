"""Entropy-based activity-pattern features from in-home location event streams."""

__version__ = "0.1.0"
