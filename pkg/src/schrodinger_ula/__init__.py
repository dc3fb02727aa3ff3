"""Langevin sampling and MAP estimation for the Schrödinger regression model."""

__version__ = "0.1.0"
