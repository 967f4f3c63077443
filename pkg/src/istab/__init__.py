"""Interface-stabilised finite elements for advection-diffusion-reaction in 2D."""

from .analysis import (
    ConvergenceTable,
    NormReport,
    coercivity_identity_A,
    coercivity_threshold_D,
    dg_equivalence_l0,
    error_report,
    infsup_estimate,
    local_conservation_check,
    norm_A,
    norm_Aprime,
    norm_D,
    norm_Dprime,
)
from .assembly import BlockSystem, CellData, assemble_system, eval_numerical_flux
from .errors import (
    CapabilityError,
    CondensationError,
    ConfigError,
    DataError,
    DegenerateNormError,
    GeometryError,
    InvalidArgumentError,
    IstabError,
    SolveError,
)
from .estimator import InterfaceStabilisedSolver
from .mesh import DIRICHLET, INTERIOR, LEFT, NEUMANN, RIGHT, Mesh, build_mesh, build_uniform_square_mesh
from .problems import (
    FOUR_K_SQUARED,
    ProblemSpec,
    advdiff_exp,
    constant_solution,
    elliptic_sine,
    hyperbolic_bey,
    manufactured,
)
from .solver import Solution, solve, solve_full, static_condense
from .space import Field, build_cell_space, build_facet_space
from .study import convergence_study, solve_case

__version__ = "0.1.0"

__all__ = [
    "advdiff_exp",
    "assemble_system",
    "BlockSystem",
    "build_cell_space",
    "build_facet_space",
    "build_mesh",
    "build_uniform_square_mesh",
    "CapabilityError",
    "CellData",
    "coercivity_identity_A",
    "coercivity_threshold_D",
    "CondensationError",
    "ConfigError",
    "constant_solution",
    "convergence_study",
    "ConvergenceTable",
    "DataError",
    "DegenerateNormError",
    "dg_equivalence_l0",
    "DIRICHLET",
    "elliptic_sine",
    "error_report",
    "eval_numerical_flux",
    "Field",
    "FOUR_K_SQUARED",
    "GeometryError",
    "hyperbolic_bey",
    "infsup_estimate",
    "InterfaceStabilisedSolver",
    "INTERIOR",
    "InvalidArgumentError",
    "IstabError",
    "LEFT",
    "local_conservation_check",
    "manufactured",
    "Mesh",
    "NEUMANN",
    "norm_A",
    "norm_Aprime",
    "norm_D",
    "norm_Dprime",
    "NormReport",
    "ProblemSpec",
    "RIGHT",
    "Solution",
    "solve",
    "solve_case",
    "solve_full",
    "SolveError",
    "static_condense",
]
