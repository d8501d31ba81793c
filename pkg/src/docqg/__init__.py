"""Document-level question generation with multi-stage attention and a
copy/generate decoder."""

__version__ = "0.1.0"
