"""qgosim: simulate and verify marker-based global operations in
asynchronous quantum distributed systems."""

__version__ = "0.1.0"
