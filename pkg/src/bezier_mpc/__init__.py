"""Bilevel Bezier-curve model predictive control for dual-arm mobile manipulation."""

__version__ = "0.1.0"
