"""Uplift meta-learners, RCT simulation and ranking-bias diagnostics."""

__version__ = "0.1.0"
