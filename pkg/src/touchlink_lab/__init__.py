"""Simulated ZigBee Light Link touchlink commissioning and the attacks against it."""

__version__ = "0.1.0"
