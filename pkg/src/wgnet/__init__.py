"""Weak Galerkin finite elements for 2D elliptic problems with neural enrichment."""

__version__ = "0.1.0"
