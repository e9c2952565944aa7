"""Microsimulation of restricted-lane access laws on a lane-drop road."""

__version__ = "0.1.0"
