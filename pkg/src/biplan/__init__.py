"""Bilevel pick-place planning: mined probabilistic operators, sampled-domain planning,
continuous plan verification and a weighted A* fallback."""

__version__ = "0.1.0"
