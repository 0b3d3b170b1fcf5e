"""Whittle-index scheduling of M servers across N multi-class queues."""
__version__ = "0.1.0"
