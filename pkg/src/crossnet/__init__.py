"""Relation-filtered text networks for cross-stock mean-reversion backtests."""

__version__ = "0.1.0"
