"""Homotopy predictor-corrector solvers with learned step-size policies."""

__version__ = "0.1.0"
