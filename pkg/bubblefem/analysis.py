"""
=============================================================================
ANALYSIS - Convergence studies and method comparison
=============================================================================

WHAT A STUDY DOES:
    for every eps:
        1. solve the fine reference once (structured mesh of size
           max(n) * 2^ref_levels, so every composite nests in it)
        2. for every scheme and every coarse n:
             solve, transfer to the reference mesh, measure
             L2 / H1 errors (against the exact solution when the problem
             has one, otherwise against the reference), the best
             approximation error of the scheme's trial space and the
             Cea-type ratio
        3. rates between consecutive n of the same (scheme, eps)

    Failures (any BubbleFEMError) are recorded in the row; the study goes on.

CSV OUTPUT:
    scheme,n,eps,dofs,iters,l2_error,h1_error,rate_l2,rate_h1,cea_ratio,wall_time_s
    17 significant digits, 'nan' for undefined entries.
=============================================================================
"""

import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from tqdm import tqdm

from .coefficients import CoefficientField, Nonlinearity
from .errors import BubbleFEMError, ConfigError, MeshError
from .fem_core import (
    DiscreteFunction,
    assemble_weighted_stiffness,
    choose_quad_order,
    error_norms,
    h1_seminorm,
    l2_norm,
    quad_rule,
)
from .kirchhoff_oracle import solve_kirchhoff
from .mesh import CoarseMesh, generate_structured, interpolate_coarse_on_fine
from .problems import Problem
from .solvers import (
    CENTROID,
    SCHEMES,
    CompositeSolution,
    PicardConfig,
    Scheme,
    SolveReport,
    TwoLevelSpace,
    composite_prolongation,
    solve_fine_reference,
    solve_galerkin,
    solve_rfb_coupled,
    solve_rfb_decoupled,
    solve_rfb_reduced,
)

logger = logging.getLogger(__name__)

CSV_COLUMNS = [
    "scheme", "n", "eps", "dofs", "iters", "l2_error", "h1_error",
    "rate_l2", "rate_h1", "cea_ratio", "wall_time_s",
]

Solution = Union[DiscreteFunction, CompositeSolution]


# =============================================================================
# CONFIGURATION AND ROWS
# =============================================================================

@dataclass
class StudyConfig:
    """
    A (scheme x n x eps) grid.

    problem: factory eps -> Problem (the coefficient depends on eps)
    """
    schemes: List[str]
    ns: List[int]
    m: int
    eps_list: List[float]
    problem: Callable[[float], Problem]
    picard: PicardConfig = field(default_factory=PicardConfig)
    ref_levels: int = 5
    reduced_mode: str = "field"
    sample_point: Tuple[float, float, float] = CENTROID
    progress: bool = False

    def __post_init__(self):
        unknown = [s for s in self.schemes if s not in SCHEMES]
        if unknown:
            raise ConfigError(f"unknown schemes {unknown}; choose from {SCHEMES}", key="study.schemes")
        if not self.ns or any(n < 1 for n in self.ns):
            raise ConfigError(f"study sizes must be >= 1, got {self.ns}", key="study.n")
        if not self.eps_list or any(e <= 0 for e in self.eps_list):
            raise ConfigError(f"eps values must be positive, got {self.eps_list}", key="study.eps")
        if self.ref_levels < 0:
            raise ConfigError("mesh.ref_levels must be >= 0", key="mesh.ref_levels")

    @property
    def reference_n(self) -> int:
        return max(self.ns) * 2 ** self.ref_levels


@dataclass
class StudyRow:
    scheme: str
    n: int
    eps: float
    dofs: int = 0
    iters: int = 0
    l2_error: float = math.nan
    h1_error: float = math.nan
    rate_l2: float = math.nan
    rate_h1: float = math.nan
    cea_ratio: float = math.nan
    wall_time: float = 0.0
    converged: bool = True
    failure: Optional[str] = None


# =============================================================================
# SCHEME DISPATCH
# =============================================================================

def run_scheme(
    scheme: str,
    mesh: CoarseMesh,
    m: int,
    problem: Problem,
    cfg: PicardConfig,
    reduced_mode: str = "field",
    sample_point: Sequence[float] = CENTROID,
) -> Tuple[Solution, SolveReport, int]:
    """
    Run one scheme on `mesh` (the coarse mesh for the RFB schemes).

    Returns:
        (solution, report, number of unknowns)
    """
    try:
        scheme = Scheme(scheme)
    except ValueError:
        raise ConfigError(f"unknown scheme {scheme!r}; choose from {SCHEMES}", key="scheme") from None
    alpha, b, f = problem.alpha, problem.b, problem.f
    free = len(mesh.free_nodes)
    if scheme is Scheme.GALERKIN:
        u, report = solve_galerkin(mesh, alpha, b, f, cfg)
        return u, report, free
    if scheme is Scheme.FINE_REFERENCE:
        u, report = solve_fine_reference(mesh, alpha, b, f, cfg)
        return u, report, free
    if scheme is Scheme.KIRCHHOFF:
        start = time.perf_counter()
        u = solve_kirchhoff(
            mesh, alpha, b, f, cfg.quad_order, cfg.linear_solver, cfg.linear_tol, cfg.linear_max_iter
        )
        report = SolveReport(scheme="kirchhoff", converged=True, iterations=1)
        report.wall_time = time.perf_counter() - start
        report.solution_norm = h1_seminorm(u)
        return u, report, free

    space = TwoLevelSpace(mesh, m, alpha, f, cfg.quad_order, cfg.threads)
    if scheme is Scheme.RFB_COUPLED:
        solution, report = solve_rfb_coupled(mesh, m, alpha, b, f, cfg, space=space)
    elif scheme is Scheme.RFB_DECOUPLED:
        solution, report = solve_rfb_decoupled(mesh, m, alpha, b, f, cfg, space=space)
    else:
        solution, report = solve_rfb_reduced(
            mesh, m, alpha, b, f, cfg, reduced_mode, sample_point, space=space
        )
    return solution, report, space.dofs


def transfer(solution: Solution, fine: CoarseMesh) -> DiscreteFunction:
    """Move a solution onto the nodes of `fine` (exact when nested)"""
    if isinstance(solution, CompositeSolution):
        return solution.to_fine(fine)
    if solution.mesh is fine:
        return solution
    try:
        return DiscreteFunction(fine, interpolate_coarse_on_fine(solution.values, solution.mesh, fine))
    except MeshError:
        logger.warning("⚠️ reference mesh does not nest the solution mesh; using point evaluation")
        return DiscreteFunction(fine, solution.evaluate(fine.nodes))


# =============================================================================
# ERRORS, BEST APPROXIMATION, RATES
# =============================================================================

def reference_energy_matrix(
    reference: DiscreteFunction,
    alpha: CoefficientField,
    b: Nonlinearity,
    quad_order: int = 2,
) -> sp.csr_matrix:
    """Stiffness on the reference mesh with the coefficient frozen at the reference"""
    mesh = reference.mesh
    rule = quad_rule(choose_quad_order(alpha.epsilon, mesh.h, quad_order, warn=False))
    pts = mesh.quadrature_points(rule.points)
    kappa = alpha(pts[..., 0], pts[..., 1]) * b(reference.at_quadrature(rule))
    return assemble_weighted_stiffness(mesh, kappa, rule)


def energy_norm(matrix: sp.spmatrix, values: np.ndarray) -> float:
    return float(np.sqrt(max(values @ (matrix @ values), 0.0)))


def best_approximation(
    reference: DiscreteFunction,
    energy: sp.spmatrix,
    prolongation: sp.spmatrix,
) -> DiscreteFunction:
    """
    Energy projection of the reference onto the range of `prolongation`:
        w = P c,   (P^T A P) c = P^T A u_ref
    """
    P = sp.csr_matrix(prolongation)
    if P.shape[1] == 0:
        return DiscreteFunction(reference.mesh, np.zeros(reference.mesh.n_nodes))
    AP = energy @ P
    coeffs = spla.spsolve(sp.csc_matrix(P.T @ AP), P.T @ (energy @ reference.values))
    return DiscreteFunction(reference.mesh, P @ np.atleast_1d(coeffs))


def trial_prolongation(solution: Solution, fine: CoarseMesh) -> sp.csr_matrix:
    """V_r for composites, V_h of the solution mesh otherwise"""
    if isinstance(solution, CompositeSolution):
        return composite_prolongation(solution.coarse.mesh, solution.submeshes, fine)
    return composite_prolongation(solution.mesh, [], fine, include_bubbles=False)


def estimate_rate(errors: Sequence[float], hs: Sequence[float]) -> List[float]:
    """
    Observed orders between consecutive entries:
        rate_k = log(e_{k-1}/e_k) / log(h_{k-1}/h_k)

    A zero (or non-finite) error gives nan for the rates it enters.

    Raises:
        ValueError: lengths differ or fewer than two entries
    """
    if len(errors) != len(hs):
        raise ValueError(f"{len(errors)} errors but {len(hs)} mesh sizes")
    if len(errors) < 2:
        raise ValueError("need at least two entries to estimate a rate")
    rates = []
    for k in range(1, len(errors)):
        e0, e1, h0, h1 = float(errors[k - 1]), float(errors[k]), float(hs[k - 1]), float(hs[k])
        if not (e0 > 0 and e1 > 0 and np.isfinite(e0) and np.isfinite(e1)) or h0 == h1:
            rates.append(math.nan)
        else:
            rates.append(math.log(e0 / e1) / math.log(h0 / h1))
    return rates


def epsilon_spread(rows: Sequence[StudyRow], scheme: str, n: int) -> float:
    """max / min of h1_error over the eps list for one (scheme, n)"""
    errors = [r.h1_error for r in rows if r.scheme == scheme and r.n == n and r.failure is None]
    errors = [e for e in errors if np.isfinite(e) and e > 0]
    if len(errors) < 2:
        return math.nan
    return max(errors) / min(errors)


def epsilon_spreads(rows: Sequence[StudyRow]) -> Dict[Tuple[str, int], float]:
    """epsilon_spread for every (scheme, n) in the rows, in row order"""
    keys = dict.fromkeys((r.scheme, r.n) for r in rows)
    return {key: epsilon_spread(rows, *key) for key in keys}


# =============================================================================
# STUDY DRIVER
# =============================================================================

@dataclass
class _Reference:
    solution: DiscreteFunction
    energy: sp.csr_matrix
    problem: Problem


def _reference(cfg: StudyConfig, eps: float) -> _Reference:
    problem = cfg.problem(eps)
    mesh = generate_structured(cfg.reference_n)
    if problem.alpha.is_oscillatory and mesh.h > eps / 4.0:
        logger.warning("⚠️ reference mesh n=%d does not resolve eps=%g (h > eps/4)", cfg.reference_n, eps)
    start = time.perf_counter()
    u, report = solve_fine_reference(mesh, problem.alpha, problem.b, problem.f, cfg.picard)
    if not report.converged:
        logger.warning("⚠️ reference solve for eps=%g did not converge", eps)
    logger.info(
        "reference n=%d eps=%g: %d iterations, %.1fs",
        cfg.reference_n, eps, report.iterations, time.perf_counter() - start,
    )
    energy = reference_energy_matrix(u, problem.alpha, problem.b, cfg.picard.quad_order)
    return _Reference(u, energy, problem)


def _measure(row: StudyRow, solution: Solution, ref: _Reference, cfg: StudyConfig) -> None:
    fine = ref.solution.mesh
    if isinstance(solution, CompositeSolution) and cfg.reference_n % (row.n * solution.m) != 0:
        logger.warning(
            "⚠️ reference n=%d does not nest the composite of n=%d, m=%d", cfg.reference_n, row.n, solution.m
        )
    u = transfer(solution, fine)

    exact = ref.problem.exact
    if exact is not None:
        row.l2_error, row.h1_error = error_norms(u, exact.u, exact.grad)
    else:
        diff = DiscreteFunction(fine, u.values - ref.solution.values)
        row.l2_error, row.h1_error = l2_norm(diff), h1_seminorm(diff)

    best = best_approximation(ref.solution, ref.energy, trial_prolongation(solution, fine))
    best_error = energy_norm(ref.energy, ref.solution.values - best.values)
    scheme_error = energy_norm(ref.energy, ref.solution.values - u.values)
    row.cea_ratio = scheme_error / best_error if best_error > 0 else math.nan


def _run_row(cfg: StudyConfig, ref: _Reference, scheme: str, n: int, eps: float) -> StudyRow:
    row = StudyRow(scheme=scheme, n=n, eps=eps)
    start = time.perf_counter()
    try:
        mesh = generate_structured(n)
        solution, report, row.dofs = run_scheme(
            scheme, mesh, cfg.m, ref.problem, cfg.picard, cfg.reduced_mode, cfg.sample_point
        )
        row.iters = report.iterations
        row.converged = report.converged
        row.wall_time = time.perf_counter() - start
        _measure(row, solution, ref, cfg)
    except BubbleFEMError as e:
        row.failure = f"{type(e).__name__}: {e}"
        row.converged = False
        row.wall_time = time.perf_counter() - start
        logger.error("❌ %s n=%d eps=%g failed: %s", scheme, n, eps, e)
    return row


def _fill_rates(rows: List[StudyRow]) -> None:
    groups: Dict[Tuple[str, float], List[StudyRow]] = {}
    for row in rows:
        groups.setdefault((row.scheme, row.eps), []).append(row)
    for group in groups.values():
        group.sort(key=lambda r: r.n)
        for prev, cur in zip(group, group[1:]):
            if prev.failure or cur.failure:
                continue
            hs = [1.0 / prev.n, 1.0 / cur.n]
            cur.rate_l2 = estimate_rate([prev.l2_error, cur.l2_error], hs)[0]
            cur.rate_h1 = estimate_rate([prev.h1_error, cur.h1_error], hs)[0]


def run_study(cfg: StudyConfig) -> List[StudyRow]:
    """
    Run the whole grid; rows come out ordered by eps, scheme, n.

    The reference for each eps is computed once and only read afterwards.
    """
    rows: List[StudyRow] = []
    ns = sorted(set(cfg.ns))
    tasks = [(eps, scheme, n) for eps in cfg.eps_list for scheme in cfg.schemes for n in ns]
    references: Dict[float, _Reference] = {}

    for eps, scheme, n in tqdm(tasks, desc="study", disable=not cfg.progress):
        if eps not in references:
            references[eps] = _reference(cfg, eps)
        row = _run_row(cfg, references[eps], scheme, n, eps)
        logger.info(
            "%s n=%d eps=%g: iters=%d l2=%.3e h1=%.3e cea=%.3f (%.2fs)",
            scheme, n, eps, row.iters, row.l2_error, row.h1_error, row.cea_ratio, row.wall_time,
        )
        rows.append(row)

    _fill_rates(rows)
    if len(cfg.eps_list) > 1:
        for (scheme, n), spread in epsilon_spreads(rows).items():
            logger.info("%s n=%d: h1 error max/min over eps = %.3f", scheme, n, spread)
    return rows


# =============================================================================
# TABLES
# =============================================================================

def rows_to_frame(rows: Sequence[StudyRow]) -> pd.DataFrame:
    """Rows as a DataFrame with exactly the CSV columns"""
    frame = pd.DataFrame([asdict(r) for r in rows], columns=[f.name for f in fields(StudyRow)])
    frame = frame.rename(columns={"wall_time": "wall_time_s"})
    return frame[CSV_COLUMNS]


def write_csv(rows: Sequence[StudyRow], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows_to_frame(rows).to_csv(path, index=False, float_format="%.17g", na_rep="nan")
    logger.info("wrote %d rows to %s", len(rows), path)
    return path
