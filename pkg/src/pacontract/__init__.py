"""Optimal dynamic principal-agent contracts under partial observation."""

__version__ = "0.1.0"
