"""Sectoral pollution-load estimation and neural-network benchmarking."""

__version__ = "0.1.0"
