"""Markov-universal prediction with the Weak Aggregating Algorithm."""

__version__ = "0.1.0"
