"""Surrogate extraction of hard-label binary classifiers under a query budget."""

__version__ = "0.1.0"
