"""Event-vector sequence models for post-tonal keyboard improvisation."""

__version__ = "0.1.0"
