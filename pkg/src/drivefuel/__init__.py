"""Driver-preference fuel analysis: car-following simulation, trip fuel,
Monte Carlo campaigns, dependence statistics and Gaussian process models."""

__version__ = "0.1.0"
