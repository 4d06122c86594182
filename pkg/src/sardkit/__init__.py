"""Simulation and estimation of spatial growth driven by aggregation,
repulsion, diffusion and exogenous topography."""

__version__ = "0.1.0"
