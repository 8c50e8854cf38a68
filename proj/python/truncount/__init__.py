"""Population size estimation for zero-truncated meta-analytic count data."""

from ._truncount import (
    Dataset,
    FittedModel,
    NumericalError,
    PopulationEstimate,
    SimConfig,
    StudyRecord,
    ValidationError,
    append,
    estimate,
    fit,
    impute_missing_proportion,
    load_csv,
    load_sim_config,
    outlier_bounds,
    select,
    simulate,
    zero_truncate,
)

__all__ = [
    "Dataset",
    "FittedModel",
    "NumericalError",
    "PopulationEstimate",
    "SimConfig",
    "StudyRecord",
    "ValidationError",
    "append",
    "estimate",
    "fit",
    "impute_missing_proportion",
    "load_csv",
    "load_sim_config",
    "outlier_bounds",
    "select",
    "simulate",
    "zero_truncate",
]
