"""Longitudinal collision avoidance for a vehicle squeezed between a leader and a follower."""

__version__ = "0.1.0"
