"""Monte Carlo pricing for fractional stochastic volatility models."""

__version__ = "0.1.0"
