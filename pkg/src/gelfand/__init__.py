"""Numerical laboratory for the Gelfand problem Δφ + λe^φ = 0.

Modules: ``domain`` (grids and Laplacians), ``steady`` (Newton, continuation,
principal eigenvalue), ``flow`` (parabolic flow), ``geometry`` (convexity of
e^{-φ/2} and boundary quantities), ``barriers`` (ball barriers and λ̄) and
``cli``.
"""
from .domain import DomainKind, DomainSpec, Grid, NodeClass, ScalarField, build_grid, discrete_laplacian
from .steady import SteadySolution, continue_branch, newton_solve, principal_eigenvalue

__all__ = [
    "DomainKind", "DomainSpec", "Grid", "NodeClass", "ScalarField", "build_grid",
    "discrete_laplacian", "SteadySolution", "continue_branch", "newton_solve",
    "principal_eigenvalue",
]
__version__ = "0.1.0"
