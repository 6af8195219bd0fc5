"""Risk-sensitive path integral control."""

from .core_model import (
    ControlProblem,
    Partition,
    PolicyHandle,
    Quadratic,
    Region,
    RiskParams,
    SingleRegionFinite,
    TargetsThreats,
    check_noise_cost_compatibility,
    make_risk_params,
    risk_params_from_lambda_theta,
    small_theta_reference,
)

__all__ = [
    "ControlProblem",
    "Partition",
    "PolicyHandle",
    "Quadratic",
    "Region",
    "RiskParams",
    "SingleRegionFinite",
    "TargetsThreats",
    "check_noise_cost_compatibility",
    "make_risk_params",
    "risk_params_from_lambda_theta",
    "small_theta_reference",
]

__version__ = "0.1.0"
