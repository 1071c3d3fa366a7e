"""Control group construction from positive-unlabeled observational data,
with propensity trimming and average treatment effect estimation."""

__version__ = "0.1.0"

from .data import (
    Dataset,
    PUDataset,
    engineer_pu,
    load_csv,
    standardize,
    validate_pu_assumptions,
)
from .effects import ate_ipw, ate_matching, ate_ols, ate_tlearner, estimate_all
from .evalmetrics import confusion, evaluate_split
from .propensity import fit_logistic, overlap_histogram, trim
from .pulearn import isvm_refine, run_pu_pipeline, spy_step
from .synthgen import SimConfig, generate, true_ate_oracle

__all__ = [
    "Dataset", "PUDataset", "SimConfig",
    "load_csv", "standardize", "engineer_pu", "validate_pu_assumptions",
    "generate", "true_ate_oracle",
    "spy_step", "isvm_refine", "run_pu_pipeline",
    "fit_logistic", "trim", "overlap_histogram",
    "ate_ols", "ate_ipw", "ate_matching", "ate_tlearner", "estimate_all",
    "confusion", "evaluate_split",
]
