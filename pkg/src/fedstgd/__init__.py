"""Federated spatio-temporal graph forecasting with dynamic inter-client dependencies."""

__version__ = "0.1.0"
