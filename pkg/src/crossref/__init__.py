"""Simulator and analytics for cross-referenced multi-domain blockchains."""

__version__ = "0.1.0"
