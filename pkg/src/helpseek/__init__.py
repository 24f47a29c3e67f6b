"""Selective help-seeking: search-penalty RL in a synthetic QA world."""

__version__ = "0.1.0"
