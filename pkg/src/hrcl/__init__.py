"""Hierarchical reinforcement + collective learning for decentralized plan selection."""

__version__ = "0.1.0"
