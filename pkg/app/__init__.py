"""Joint pinching-antenna placement and client sampling for synchronous FL."""

__version__ = "0.3.0"
