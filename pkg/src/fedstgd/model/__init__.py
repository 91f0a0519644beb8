"""Recurrent dynamic-graph cell, its federated decomposition, and parameters."""
