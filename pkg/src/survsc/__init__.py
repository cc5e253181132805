"""Synthetic control, nearest-neighbour matching and penalized hybrids for survival outcomes."""

from .data import (
    Cohort,
    CsvSchema,
    Subject,
    SurvivalCurve,
    SyntheticUnit,
    WeightVector,
    load_cohort_csv,
    normalize_covariates,
    pairwise_distance,
)
from .estimators import EstimatorKind, build_control_group, build_synthetic_unit
from .solver import SolverConfig, nearest_neighbor, solve_group_weights, solve_sc_weights
from .survival import fit_cox, kaplan_meier, ks_statistic, mae_rmst, rmst

__version__ = "0.1.0"
