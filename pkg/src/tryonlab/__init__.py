"""Desk-scale text-editable virtual try-on toolkit."""

__version__ = "0.1.0"
