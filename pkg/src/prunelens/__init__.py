"""Decision-margin diagnostics for layer-pruned decoder transformers."""

__version__ = "0.1.0"
