"""Multi-granularity panoramic activity recognition on a from-scratch numpy stack."""

__version__ = "0.1.0"
