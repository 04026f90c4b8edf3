"""Fairness audit harness for name de-identification systems."""

__version__ = "0.1.0"
