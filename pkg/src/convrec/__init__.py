"""Desk-scale conversational recommender with constrained bidirectional decoding."""

__version__ = "0.1.0"
