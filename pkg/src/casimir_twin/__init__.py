"""Digital twin of a plane-parallel Casimir-force apparatus."""

__version__ = "0.1.0"
