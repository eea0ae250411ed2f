"""Unsupervised selection of informative ICD-10 code features."""

__version__ = "0.1.0"
