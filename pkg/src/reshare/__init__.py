"""Hawkes-process modelling of online reshare cascades."""

__version__ = "0.1.0"
