"""Correlated binary failure modeling for infrastructure reliability studies.

Fits pairwise maximum-entropy (Ising) and dichotomized Gaussian models of
correlated component failures from first/second-order moment constraints,
generates those constraints from a parametric seismic hazard model, and
runs network trip-completion Monte Carlo experiments.
"""

__version__ = "0.1.0"

from .core import (
    IsingModel,
    MomentConstraints,
    SecondMomentMatrix,
    constraints_to_second_moments,
    enumerate_pmf,
    enumerate_states,
    exact_moments,
    feasibility_report,
    hamiltonian,
    moments_from_pmf,
    second_moments_to_constraints,
)
from .dg import DGModel, bvn_cdf, dg_pmf_mc, fit_dg, repair_psd, sample_dg
from .ising import (
    FitReport,
    GibbsConfig,
    TrainConfig,
    estimate_moments,
    fit_cd,
    fit_ml,
    gibbs_conditional,
    gibbs_sample,
    synthesize_data,
)

__all__ = [
    "DGModel",
    "FitReport",
    "GibbsConfig",
    "IsingModel",
    "MomentConstraints",
    "SecondMomentMatrix",
    "TrainConfig",
    "bvn_cdf",
    "constraints_to_second_moments",
    "dg_pmf_mc",
    "enumerate_pmf",
    "enumerate_states",
    "estimate_moments",
    "exact_moments",
    "feasibility_report",
    "fit_cd",
    "fit_dg",
    "fit_ml",
    "gibbs_conditional",
    "gibbs_sample",
    "hamiltonian",
    "moments_from_pmf",
    "repair_psd",
    "sample_dg",
    "second_moments_to_constraints",
    "synthesize_data",
]
