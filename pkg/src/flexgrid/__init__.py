"""Flexibility analysis of LV distribution grids under load/PV uncertainty."""

__version__ = "0.1.0"

from .flexcore import (
    Direction,
    FlexibilityResult,
    LinearConstraintSystem,
    UncertaintyModel,
    UncertainParameter,
    assemble_constraints,
    beta_max,
    flexibility_index,
    trace_feasible_region_2d,
)
from .gridmodel import (
    Branch,
    Bus,
    GridModel,
    MeasurementFrame,
    TransformerSpec,
    from_per_unit,
    load_grid,
    load_measurements,
    save_grid,
    to_per_unit,
)
from .powerflow import OperatingPoint, operating_point_from_frame, solve_power_flow
from .sensitivity import (
    SensitivitySet,
    sensitivities_model_based,
    sensitivities_model_less,
)
from .synthgen import DaySpec, FeederSpec, generate_feeder, generate_profiles
from .timeseries import (
    SlotReport,
    UncertaintyPolicy,
    build_uncertainty,
    run_series,
    summarize,
)

__all__ = [
    "Branch",
    "Bus",
    "DaySpec",
    "Direction",
    "FeederSpec",
    "FlexibilityResult",
    "GridModel",
    "LinearConstraintSystem",
    "MeasurementFrame",
    "OperatingPoint",
    "SensitivitySet",
    "SlotReport",
    "TransformerSpec",
    "UncertaintyModel",
    "UncertaintyPolicy",
    "UncertainParameter",
    "assemble_constraints",
    "beta_max",
    "build_uncertainty",
    "flexibility_index",
    "from_per_unit",
    "generate_feeder",
    "generate_profiles",
    "load_grid",
    "load_measurements",
    "operating_point_from_frame",
    "run_series",
    "save_grid",
    "sensitivities_model_based",
    "sensitivities_model_less",
    "solve_power_flow",
    "summarize",
    "to_per_unit",
    "trace_feasible_region_2d",
]
