"""Singular normally hyperbolic invariant cylinders near a Hamiltonian saddle."""

from ._nhic import (
    CheckResult,
    HamiltonianModel,
    NhicError,
    Pipeline,
    RunConfig,
    SaddleSpectrum,
    analyze_saddle,
    energy_grid,
    load_config,
    parse_config,
)

__all__ = [
    "CheckResult",
    "HamiltonianModel",
    "NhicError",
    "Pipeline",
    "RunConfig",
    "SaddleSpectrum",
    "analyze_saddle",
    "energy_grid",
    "load_config",
    "parse_config",
]
