"""Forecasting irregular leadership change with split-population duration models."""

__version__ = "0.1.0"
