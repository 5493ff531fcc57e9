"""Forecasts unbiased on event families, with swap-regret evaluation for downstream agents."""

__version__ = "0.1.0"
