"""Classifier-based distribution distance probes."""
__version__ = "0.1.0"
