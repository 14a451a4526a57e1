"""Evaluation targets: choice-model building blocks, a toy activity-based
simulator, the series loss, and analytic benchmark functions."""
from .benchmarks import BENCHMARKS, benchmark, benchmark_space
from .choice import mnl_probabilities, ordered_probit, weibull_hazard
from .toy import (N_BINS, ToySimConfig, default_observed, loss_mse, make_observed,
                  read_series, toy_simulator, write_series)

__all__ = [
    "BENCHMARKS", "benchmark", "benchmark_space",
    "mnl_probabilities", "ordered_probit", "weibull_hazard",
    "N_BINS", "ToySimConfig", "default_observed", "loss_mse", "make_observed",
    "read_series", "toy_simulator", "write_series",
]
