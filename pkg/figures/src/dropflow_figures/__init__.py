"""Figure toolkit for dropflow output files (read-only consumer)."""

__version__ = "0.1.0"
