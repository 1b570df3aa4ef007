"""Trace exporter: real checkpoints -> trace-bundle/1 directories."""

__version__ = "0.1.0"
