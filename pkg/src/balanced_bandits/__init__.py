"""Balanced (inverse-propensity weighted) contextual bandits and a benchmark harness."""

__version__ = "0.1.0"
