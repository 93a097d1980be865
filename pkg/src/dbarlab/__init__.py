"""Inverse scattering at positive energy for the 2D Schroedinger equation on the unit disc.

Pipeline: potential -> DtN map and scattering data (r on an annulus, rho on the
torus) -> non-local Riemann-Hilbert problem -> reconstructed potential.
"""
__version__ = "0.1.0"

from .errors import ConfigError, DbarlabError, SolverError
from .grids_norms import PotentialField, SpatialGrid, SpectralGrid, build_potential

__all__ = ["ConfigError", "DbarlabError", "SolverError", "PotentialField", "SpatialGrid",
           "SpectralGrid", "build_potential", "__version__"]
