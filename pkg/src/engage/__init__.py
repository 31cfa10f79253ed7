"""Skeleton-based student action recognition and behavioral engagement estimation."""

__version__ = "0.1.0"
