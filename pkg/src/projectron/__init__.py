"""Radon-projection features and a shallow network that classifies them."""

__version__ = "0.1.0"
