"""Equity activity statistics: aggregation, intraday patterns, log-normal
collapse, growth-rate scaling and detrended fluctuation analysis."""

__version__ = "0.1.0"
