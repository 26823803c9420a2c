"""Plug-in classifiers with elicited example weights for black-box metrics."""

__version__ = "0.1.0"
