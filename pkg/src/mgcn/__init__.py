"""Causal networks for multi-cohort data with missingness graphs, selection
nodes and Structural EM."""

__version__ = "0.1.0"
