"""Crossbar-aware neural network compression: rank clipping, group connection
deletion, and crossbar area / routing estimation."""

__version__ = "0.1.0"
