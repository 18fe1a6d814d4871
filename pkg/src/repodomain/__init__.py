"""Application-domain classification and practice mining for GitHub repositories."""

__version__ = "0.1.0"
