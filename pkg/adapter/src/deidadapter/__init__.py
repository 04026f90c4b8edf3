"""Adapter exposing NER engines over the de-identification line protocol."""

__version__ = "0.1.0"
