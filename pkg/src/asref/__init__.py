"""Explicit-state workbench for action systems with concurrent objects."""

__version__ = "0.1.0"
