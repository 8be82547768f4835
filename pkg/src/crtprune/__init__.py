"""Pruning, explosion and fragmentation of Levy trees: branching-mechanism
calculus, CSBP simulation, mass-flow laws and Monte Carlo validation."""

__version__ = "0.1.0"
