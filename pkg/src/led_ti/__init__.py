"""Cycle-accurate threshold implementation of the LED-128 block cipher, with
simulated power traces and fixed-vs-random leakage assessment."""

__version__ = "0.1.0"
