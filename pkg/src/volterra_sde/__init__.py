"""Simulation and verification toolkit for neutral retarded stochastic
equations driven by regular Volterra noise."""

__version__ = "0.1.0"
