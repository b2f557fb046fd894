"""Deterministic simulation stack for aerial frontier exploration."""

__version__ = "0.1.0"
