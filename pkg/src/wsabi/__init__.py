"""Warped sequential active Bayesian integration (WSABI) for model evidence."""
from .gp import Dataset, GpPosterior, KernelParams, fit_posterior, optimize_hyperparams
from .quadrature import EvidenceEstimate, GaussianPrior, evidence, evidence_bmc
from .runs import Budget, Likelihood, RunTrace
from .sampler import AcquisitionConfig, WsabiConfig, run_wsabi
from .warp import Flavour, build_model

__version__ = "0.1.0"

__all__ = [
    "AcquisitionConfig", "Budget", "Dataset", "EvidenceEstimate", "Flavour", "GaussianPrior",
    "GpPosterior", "KernelParams", "Likelihood", "RunTrace", "WsabiConfig", "build_model",
    "evidence", "evidence_bmc", "fit_posterior", "optimize_hyperparams", "run_wsabi",
]
