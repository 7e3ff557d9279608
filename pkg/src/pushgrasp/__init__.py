"""Desk-scale push-grasp synergy laboratory."""

__version__ = "0.1.0"
