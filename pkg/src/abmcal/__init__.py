"""Bayesian calibration of expensive simulators.

Gaussian-process surrogates with expected improvement, optionally searched
in an active subspace or the latent space of a combined regression
autoencoder, with simulator runs farmed out to a worker pool.
"""
from abmcal.active import active_subspace, bootstrap_eigenvalues, reconstruct
from abmcal.bo import BOConfig, BOState, expected_improvement, propose_batch, run_calibration
from abmcal.design import ABM_SPACE, DesignPoint, ParameterSpace, latin_hypercube, scale_to_unit, unscale
from abmcal.gp import KernelConfig, MeanFunction, fit_gp, posterior
from abmcal.nn import TrainConfig, train_combined
from abmcal.pool import EvaluationJob, JobResult, external_simulator, submit_batch
from abmcal.sensitivity import build_trajectories, elementary_effects, morris_stats, rank_variables

__version__ = "0.1.0"

__all__ = [
    "ABM_SPACE", "BOConfig", "BOState", "DesignPoint", "EvaluationJob", "JobResult", "KernelConfig",
    "MeanFunction", "ParameterSpace", "TrainConfig", "active_subspace", "bootstrap_eigenvalues",
    "build_trajectories", "elementary_effects", "expected_improvement", "external_simulator", "fit_gp",
    "latin_hypercube", "morris_stats", "posterior", "propose_batch", "rank_variables", "reconstruct",
    "run_calibration", "scale_to_unit", "submit_batch", "train_combined", "unscale",
]
