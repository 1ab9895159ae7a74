"""Desk-scale OFDM link simulation with spiking and classical receivers."""

__version__ = "0.1.0"
