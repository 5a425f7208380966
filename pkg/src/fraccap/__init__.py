"""Fractional capillarity energies, extensions, contact angles and droplet minimisation."""

__version__ = "0.1.0"

from ._validation import IdentityViolation, NoBracketError, NotConvergedWarning
from .energies import (
    EnergyBreakdown, capillarity_energy, check_ball_split_identity, check_comparison_identity, check_telescoping,
    fractional_perimeter, minimizer_comparison_energy, per_s_sigma, verify_identities,
)
from .extension import (
    ExtensionField, PhiProfile, PoissonKernel, capillarity_extension_energy, extend,
    extension_optimality_check, normal_gradient_boundary_integral, phi_profile,
    weighted_dirichlet,
)
from .geometry import (
    Ball, Box, Empty, GridSet, HalfSpace, KernelParams, Lattice, Sector, coarsen, rasterize,
    refine, rescale, translate,
)
from .interaction import InteractionResult, QuadratureConfig, interaction, interaction_mc
from .minimizer import (
    AnnealConfig, BlowupAnalyzer, BlowupReport, DropletMinimizer, blowup, incremental_delta,
    minimize,
)
from .younglaw import M, YoungLawSolver, contact_angle, young_table

__all__ = [
    "AnnealConfig",
    "Ball",
    "BlowupAnalyzer",
    "BlowupReport",
    "Box",
    "DropletMinimizer",
    "Empty",
    "EnergyBreakdown",
    "ExtensionField",
    "GridSet",
    "HalfSpace",
    "IdentityViolation",
    "InteractionResult",
    "KernelParams",
    "Lattice",
    "M",
    "NoBracketError",
    "NotConvergedWarning",
    "PhiProfile",
    "PoissonKernel",
    "QuadratureConfig",
    "Sector",
    "YoungLawSolver",
    "blowup",
    "capillarity_energy",
    "capillarity_extension_energy",
    "check_ball_split_identity",
    "check_comparison_identity",
    "check_telescoping",
    "coarsen",
    "contact_angle",
    "extend",
    "extension_optimality_check",
    "fractional_perimeter",
    "incremental_delta",
    "interaction",
    "interaction_mc",
    "minimize",
    "minimizer_comparison_energy",
    "normal_gradient_boundary_integral",
    "per_s_sigma",
    "phi_profile",
    "rasterize",
    "refine",
    "rescale",
    "translate",
    "verify_identities",
    "weighted_dirichlet",
    "young_table",
]
