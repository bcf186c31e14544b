"""epochd: a single-writer governance kernel for .epoch artifacts."""

__version__ = "0.1.0"
