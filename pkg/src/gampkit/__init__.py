"""Generalized approximate message passing with ISTA/ADMM baselines and fixed-point verifiers."""

__version__ = "0.1.0"
