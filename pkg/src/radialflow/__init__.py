"""Monte Carlo laboratory for Brownian flows with singular radial drift."""

__version__ = "0.1.0"
