"""Estimation of gas-source strength (occupancy) and airflow from transient data."""
from .model import (Constant, Heterogeneous, RandomWalk, TimeSeries, ZoneParams,
                    co2_generation_rate, growth_curve, poly_approx, simulate)

__version__ = "0.1.0"

__all__ = ["Constant", "Heterogeneous", "RandomWalk", "TimeSeries", "ZoneParams",
           "co2_generation_rate", "growth_curve", "poly_approx", "simulate"]
