"""
bubblefem - Residual-free bubble finite elements for nonlinear diffusion
with oscillatory coefficients.
"""

__version__ = "0.1.0"

from .errors import (
    BubbleFEMError,
    CoefficientBoundsError,
    ConfigError,
    ConvergenceError,
    InversionError,
    LinearSolverError,
    LocalSolveError,
    MeshError,
    SnapshotMismatchError,
)
from .mesh import (
    CoarseMesh,
    SubMesh,
    build_all_submeshes,
    build_submesh,
    generate_structured,
    merge_submeshes,
    read_mesh,
    refine_uniform,
    write_mesh,
)
from .coefficients import (
    CoefficientField,
    Nonlinearity,
    make_constant_alpha,
    make_layered_alpha,
    make_nonlinearity,
    make_nonlinearity_constant,
    make_nonlinearity_sin,
    make_periodic_alpha,
)
from .fem_core import DiscreteFunction, QuadRule, SolverMethod, assemble_system, quad_rule, solve_spd
from .bubble import (
    BubbleLifts,
    CondensedContribution,
    condense,
    recover_bubble,
    residual_free_check,
    solve_local_lifts,
)
from .solvers import (
    CompositeSolution,
    PicardConfig,
    ReducedMode,
    Scheme,
    SolveReport,
    TwoLevelSpace,
    solve_fine_reference,
    solve_galerkin,
    solve_rfb_coupled,
    solve_rfb_decoupled,
    solve_rfb_reduced,
)
from .kirchhoff_oracle import ManufacturedSolution, manufacture_f, sinsin_solution, solve_kirchhoff
from .analysis import StudyConfig, StudyRow, estimate_rate, run_study, write_csv

__all__ = [
    "BubbleFEMError", "CoefficientBoundsError", "ConfigError", "ConvergenceError",
    "InversionError", "LinearSolverError", "LocalSolveError", "MeshError", "SnapshotMismatchError",
    "CoarseMesh", "SubMesh", "build_all_submeshes", "build_submesh", "generate_structured",
    "merge_submeshes", "read_mesh", "refine_uniform", "write_mesh",
    "CoefficientField", "Nonlinearity", "make_constant_alpha", "make_layered_alpha",
    "make_nonlinearity", "make_nonlinearity_constant", "make_nonlinearity_sin", "make_periodic_alpha",
    "DiscreteFunction", "QuadRule", "SolverMethod", "assemble_system", "quad_rule", "solve_spd",
    "BubbleLifts", "CondensedContribution", "condense", "recover_bubble",
    "residual_free_check", "solve_local_lifts",
    "CompositeSolution", "PicardConfig", "ReducedMode", "Scheme", "SolveReport", "TwoLevelSpace",
    "solve_fine_reference", "solve_galerkin", "solve_rfb_coupled",
    "solve_rfb_decoupled", "solve_rfb_reduced",
    "ManufacturedSolution", "manufacture_f", "sinsin_solution", "solve_kirchhoff",
    "StudyConfig", "StudyRow", "estimate_rate", "run_study", "write_csv",
]
