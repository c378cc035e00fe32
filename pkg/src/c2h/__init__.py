"""Self-training clustering with a PLS baseline and two-qubit hybrid models."""

__version__ = "0.1.0"
