"""Sandbox harness package: see runner.py for the protocol."""

__version__ = "0.1.0"
