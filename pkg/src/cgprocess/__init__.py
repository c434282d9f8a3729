"""Simulation, exact formulas and generating-function solvers for the
compulsive-gambler process on weighted meeting graphs."""

__version__ = "0.1.0"
