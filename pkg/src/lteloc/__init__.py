"""Discrete-event simulator of uplink-based UE localization over an LTE cell."""

__version__ = "0.1.0"
