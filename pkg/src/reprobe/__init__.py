"""Reconfigurable, self-adaptive monitoring probe agent."""

__version__ = "0.1.0"
