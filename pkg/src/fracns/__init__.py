"""Pseudo-spectral solver and verification suite for stationary
fractional-dissipation Navier-Stokes flow on a large periodic box."""

from .spectral import (
    FracParams,
    Grid,
    RealVectorField,
    SpectralVectorField,
    apply_bilinear,
    bilinear_symbol,
    build_grid,
    fractional_power,
    leray_project,
    semigroup_multiply,
    to_real,
    to_spectral,
)

__all__ = [
    "FracParams",
    "Grid",
    "RealVectorField",
    "SpectralVectorField",
    "apply_bilinear",
    "bilinear_symbol",
    "build_grid",
    "fractional_power",
    "leray_project",
    "semigroup_multiply",
    "to_real",
    "to_spectral",
]

__version__ = "0.1.0"
