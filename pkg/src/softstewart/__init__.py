"""Simulator and analysis suite for a compliant six-strut positioning platform."""

__version__ = "0.1.0"
