"""Simulation laboratory for the random field mixed-spin Ginzburg-Landau model."""

__version__ = "0.1.0"
