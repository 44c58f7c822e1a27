"""Exact steady state, simulation and macroscopic fluctuations of the open harmonic process."""
from .macroscale import (
    ProfileGrid,
    additivity_check_pressure,
    additivity_check_rate,
    pressure_constant_closed_form,
    pressure_functional,
    pressure_variational,
    rate_function,
    rate_functional,
    theta_star,
    transport_coefficients,
)
from .mgf import c_map, mgf, mgf_constant, phi_constant_recurrence, phi_finite_sum
from .model import (
    Configuration,
    ModelParams,
    build_truncated_generator,
    equilibrium_product_measure,
    jump_rate,
    negbin_mgf,
    negbin_pmf,
    total_exit_rate,
)
from .ness import (
    appendixA_check,
    factorial_moment,
    marginal_distribution,
    mixture_probability,
    ness_probability,
    sample_mixture,
)
from .simulator import ReplicaStats, run, sample_injection_size, sample_removal_size, step

__all__ = [
    "ProfileGrid", "additivity_check_pressure", "additivity_check_rate",
    "pressure_constant_closed_form", "pressure_functional", "pressure_variational",
    "rate_function", "rate_functional", "theta_star", "transport_coefficients",
    "c_map", "mgf", "mgf_constant", "phi_constant_recurrence", "phi_finite_sum",
    "Configuration", "ModelParams", "build_truncated_generator", "equilibrium_product_measure",
    "jump_rate", "negbin_mgf", "negbin_pmf", "total_exit_rate",
    "appendixA_check", "factorial_moment", "marginal_distribution", "mixture_probability",
    "ness_probability", "sample_mixture",
    "ReplicaStats", "run", "sample_injection_size", "sample_removal_size", "step",
]

__version__ = "0.1.0"
