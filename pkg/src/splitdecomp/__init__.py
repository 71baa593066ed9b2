"""Solution-decomposition splitting schemes for first-order evolution equations."""

from .linops import SymmetricOperator, apply, energy_norm, inner, min_eigenvalue, solve_spsd, spectral_radius
from .decomposition import (
    BlockVector,
    DecompositionFamily,
    custom_family,
    decompose,
    direct_sum_family,
    overlapping_family,
    reconstruct,
    standard_families,
    validate_family,
)
from .assembly import (
    BlockOperator,
    assemble_mass,
    assemble_stiffness,
    check_dominance,
    diagonal_part,
    triangular_split,
)
from .problems import EvolutionProblem, heat_1d, heat_2d, homogeneous, manufactured, modal_exact
from .schemes import (
    MonitorRecord,
    SchemeConfig,
    Trajectory,
    amplification_matrix,
    check_D_operator,
    monitor_energy,
    run,
)

__all__ = [
    "SymmetricOperator",
    "apply",
    "inner",
    "energy_norm",
    "solve_spsd",
    "min_eigenvalue",
    "spectral_radius",
    "DecompositionFamily",
    "BlockVector",
    "direct_sum_family",
    "overlapping_family",
    "custom_family",
    "validate_family",
    "decompose",
    "reconstruct",
    "standard_families",
    "BlockOperator",
    "assemble_mass",
    "assemble_stiffness",
    "diagonal_part",
    "triangular_split",
    "check_dominance",
    "EvolutionProblem",
    "heat_1d",
    "heat_2d",
    "manufactured",
    "homogeneous",
    "modal_exact",
    "SchemeConfig",
    "MonitorRecord",
    "Trajectory",
    "run",
    "monitor_energy",
    "amplification_matrix",
    "check_D_operator",
]

__version__ = "0.1.0"
