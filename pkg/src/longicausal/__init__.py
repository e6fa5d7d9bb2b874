"""Longitudinal causal inference: g-formula, sequential g-formula and LTMLE."""

__version__ = "0.1.0"
