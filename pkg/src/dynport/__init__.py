"""Dynamic portfolio optimization over discrete holdings."""

__version__ = "0.1.0"
