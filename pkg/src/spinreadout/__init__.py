"""Simulation and analysis of single-shot optical spin readout and weak measurement."""

__version__ = "0.1.0"
