"""
=============================================================================
SOLVERS - Picard drivers for the classical and the bubble-enriched methods
=============================================================================

Every driver freezes the coefficient at the previous iterate,
    kappa^{n-1}(x) = alpha_eps(x) b(u^{n-1}(x)),
solves one linear problem and stops when the relative H1 increment
    |u^n - u^{n-1}|_H1 <= tol |u^n|_H1
or after max_iter iterations (the last iterate is then returned with
converged=False).

SCHEMES:
    galerkin         P1 on the given mesh
    fine_reference   galerkin on a mesh resolving eps (stand-in for u_eps)
    rfb_coupled      coefficient b(u_h + u_b) everywhere, bubbles condensed
    rfb_decoupled    coarse step with the old bubble as data, then local
                     step with b(u_h^n + u_b^{n-1})
    rfb_reduced      local problems with b(u_h) only (field, element
                     average or point sample), global step with b(u_h + u_b)

USAGE:
    coarse = generate_structured(8)
    solution, report = solve_rfb_coupled(coarse, 16, alpha, b, 1.0)
    print(report.converged, report.iterations, report.final_ratio)
=============================================================================
"""

import logging
import math
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from joblib import Parallel, delayed

from .bubble import (
    BubbleLifts,
    LocalOperator,
    coarse_element_load,
    compute_lifts,
    condense,
    couple,
    freeze_local_operator,
    new_snapshot,
    recover_bubble,
)
from .coefficients import CoefficientField, Nonlinearity
from .errors import ConfigError, ConvergenceError, LinearSolverError, MeshError
from .fem_core import (
    DEFAULT_SOLVER_MAX_ITER,
    DEFAULT_SOLVER_TOL,
    SOLVER_METHODS,
    DiscreteFunction,
    SparseSystem,
    assemble_from_local,
    assemble_load,
    assemble_weighted_stiffness,
    choose_quad_order,
    eliminate_dirichlet,
    h1_seminorm,
    quad_rule,
    solve_spd,
)
from .mesh import CoarseMesh, SubMesh, TriangleMesh, barycentric_grid, build_all_submeshes, merge_submeshes

logger = logging.getLogger(__name__)

class Scheme(str, Enum):
    GALERKIN = "galerkin"
    RFB_COUPLED = "rfb_coupled"
    RFB_DECOUPLED = "rfb_decoupled"
    RFB_REDUCED = "rfb_reduced"
    FINE_REFERENCE = "fine_reference"
    KIRCHHOFF = "kirchhoff"


class ReducedMode(str, Enum):
    """Where the reduced scheme samples u_h for the local coefficient"""
    FIELD = "field"
    ELEMENT_AVERAGE = "element_average"
    POINT_SAMPLE = "point_sample"


SCHEMES = tuple(s.value for s in Scheme)
REDUCED_MODES = tuple(m.value for m in ReducedMode)

CENTROID = (1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0)

LoadLike = Union[Callable, float]


# =============================================================================
# CONFIGURATION AND REPORTS
# =============================================================================

@dataclass
class PicardConfig:
    """
    Settings shared by all Picard drivers.

    initial_guess: None (zero) or coarse nodal values / DiscreteFunction
    warm_start:    start RFB schemes from the classical Galerkin solution
    threads:       worker threads for element loops (0 = all cores)
    """
    tol: float = 1e-8
    max_iter: int = 50
    initial_guess: Optional[Union[DiscreteFunction, np.ndarray]] = None
    warm_start: bool = False
    linear_solver: str = "cg"
    linear_tol: float = DEFAULT_SOLVER_TOL
    linear_max_iter: int = DEFAULT_SOLVER_MAX_ITER
    quad_order: int = 2
    threads: int = 1

    def __post_init__(self):
        if not self.tol > 0:
            raise ConfigError(f"picard.tol must be positive, got {self.tol}", key="picard.tol")
        if self.max_iter < 1:
            raise ConfigError(f"picard.max_iter must be >= 1, got {self.max_iter}", key="picard.max_iter")
        if self.linear_solver not in SOLVER_METHODS:
            raise ConfigError(
                f"solver.method must be one of {SOLVER_METHODS}, got {self.linear_solver!r}",
                key="solver.method",
            )
        if self.quad_order not in (1, 2, 4):
            raise ConfigError(f"quad.order must be 1, 2 or 4, got {self.quad_order}", key="quad.order")
        if self.threads < 0:
            raise ConfigError(f"threads must be >= 0, got {self.threads}", key="threads")


@dataclass
class SolveReport:
    """What a Picard run did; contraction_estimates[k] = inc[k+1] / inc[k]"""
    scheme: str
    converged: bool = False
    iterations: int = 0
    increment_history: List[float] = field(default_factory=list)
    contraction_estimates: List[float] = field(default_factory=list)
    wall_time: float = 0.0
    initial_guess: str = "zero"
    solution_norm: float = 0.0

    def record(self, increment: float) -> None:
        if self.increment_history:
            previous = self.increment_history[-1]
            self.contraction_estimates.append(increment / previous if previous > 0 else 0.0)
        self.increment_history.append(float(increment))
        self.iterations = len(self.increment_history)

    @property
    def final_ratio(self) -> float:
        return self.contraction_estimates[-1] if self.contraction_estimates else math.nan

    def raise_for_convergence(self) -> None:
        if not self.converged:
            raise ConvergenceError(
                f"{self.scheme} did not converge in {self.iterations} iterations", report=self
            )

    def to_dict(self) -> dict:
        return {
            "scheme": self.scheme,
            "converged": self.converged,
            "iterations": self.iterations,
            "increment_history": list(self.increment_history),
            "contraction_estimates": list(self.contraction_estimates),
            "final_ratio": self.final_ratio,
            "wall_time_s": self.wall_time,
            "initial_guess": self.initial_guess,
            "solution_norm": self.solution_norm,
        }


def _picard(
    report: SolveReport,
    cfg: PicardConfig,
    state,
    step: Callable,
    increment: Callable,
    norm: Callable,
    one_shot: bool = False,
):
    """
    Shared fixed-point loop.

    one_shot: the frozen coefficient does not depend on the iterate, so the
    first solve already is the fixed point.
    """
    start = time.perf_counter()
    for it in range(1, cfg.max_iter + 1):
        new_state = step(state)
        inc = increment(new_state, state)
        size = norm(new_state)
        report.record(inc)
        logger.info(
            "%s: iteration %d increment %.3e (relative %.3e) ratio %.3f",
            report.scheme, it, inc, inc / size if size > 0 else 0.0, report.final_ratio,
        )
        state = new_state
        report.solution_norm = size
        if inc <= cfg.tol * size or one_shot:
            report.converged = True
            break
    report.wall_time = time.perf_counter() - start
    if not report.converged:
        logger.warning(
            "⚠️ %s: no convergence after %d iterations (last increment %.3e)",
            report.scheme, report.iterations, report.increment_history[-1],
        )
    return state


def _solve_symmetric(system: SparseSystem, cfg: PicardConfig) -> np.ndarray:
    return system.expand(solve_spd(system, cfg.linear_tol, cfg.linear_max_iter, cfg.linear_solver))


def _solve_general(system: SparseSystem) -> np.ndarray:
    """Sparse LU for the non-symmetric coarse systems of the reduced scheme"""
    if system.matrix.shape[0] == 0:
        return system.expand(np.zeros(0))
    x = spla.spsolve(sp.csc_matrix(system.matrix), system.rhs)
    if not np.all(np.isfinite(x)):
        raise LinearSolverError("sparse LU produced non-finite values", residual=np.inf, iterations=0)
    return system.expand(np.atleast_1d(x))


# =============================================================================
# CLASSICAL GALERKIN
# =============================================================================

def _initial_values(mesh: TriangleMesh, cfg: PicardConfig) -> Tuple[np.ndarray, str]:
    guess = cfg.initial_guess
    if guess is None:
        return np.zeros(mesh.n_nodes), "zero"
    values = guess.values if isinstance(guess, DiscreteFunction) else np.asarray(guess, dtype=float)
    if values.shape != (mesh.n_nodes,):
        raise ConfigError(
            f"initial guess has {values.shape} values, mesh has {mesh.n_nodes} nodes",
            key="picard.initial_guess",
        )
    return values.copy(), "given"


def solve_galerkin(
    mesh: CoarseMesh,
    alpha: CoefficientField,
    b: Nonlinearity,
    f: LoadLike,
    cfg: Optional[PicardConfig] = None,
    scheme: str = "galerkin",
) -> Tuple[DiscreteFunction, SolveReport]:
    """
    Picard iteration for P1 Galerkin on `mesh`.

    Each step assembles kappa = alpha b(u^{n-1}) at the quadrature points
    and solves the SPD system on the free nodes.
    """
    cfg = cfg or PicardConfig()
    rule = quad_rule(choose_quad_order(alpha.epsilon, mesh.h, cfg.quad_order, warn=scheme != "galerkin"))
    pts = mesh.quadrature_points(rule.points)
    alpha_q = alpha(pts[..., 0], pts[..., 1])
    alpha.check_bounds(alpha_q, pts)
    load = assemble_load(mesh, f, rule)

    u0, label = _initial_values(mesh, cfg)
    report = SolveReport(scheme=scheme, initial_guess=label)

    def step(u):
        uq = u[mesh.triangles] @ rule.points.T
        bq = b(uq)
        b.check_lower_bound(bq, uq)
        system = eliminate_dirichlet(mesh, assemble_weighted_stiffness(mesh, alpha_q * bq, rule), load)
        return _solve_symmetric(system, cfg)

    u = _picard(
        report, cfg, u0, step,
        increment=lambda new, old: h1_seminorm(DiscreteFunction(mesh, new - old)),
        norm=lambda new: h1_seminorm(DiscreteFunction(mesh, new)),
        one_shot=b.is_constant,
    )
    return DiscreteFunction(mesh, u), report


def solve_fine_reference(
    fine: CoarseMesh,
    alpha: CoefficientField,
    b: Nonlinearity,
    f: LoadLike,
    cfg: Optional[PicardConfig] = None,
) -> Tuple[DiscreteFunction, SolveReport]:
    """Galerkin Picard on a mesh meant to resolve eps (warns when h > eps/4)"""
    return solve_galerkin(fine, alpha, b, f, cfg, scheme="fine_reference")


# =============================================================================
# TWO-LEVEL SPACE
# =============================================================================

class TwoLevelSpace:
    """
    Coarse mesh plus its level-m sub-meshes, with everything that stays
    fixed across Picard iterations cached per element: alpha at the fine
    quadrature points, fine and coarse load vectors, gradients and areas.

    Composite functions are handled as nodal stacks of shape (nK, N): row K
    holds the values of u_h + u_b at the N sub-mesh nodes of element K.
    """

    def __init__(
        self,
        coarse: CoarseMesh,
        m: int,
        alpha: CoefficientField,
        f: LoadLike,
        quad_order: int = 2,
        threads: int = 1,
    ):
        self.coarse = coarse
        self.m = int(m)
        self.submeshes = build_all_submeshes(coarse, m)
        self.grid = barycentric_grid(m)
        self.threads = threads

        fine_h = max(s.h for s in self.submeshes)
        self.rule = quad_rule(choose_quad_order(alpha.epsilon, fine_h, quad_order))
        self.coarse_rule = quad_rule(choose_quad_order(alpha.epsilon, coarse.h, quad_order, warn=False))

        pts = np.stack([s.quadrature_points(self.rule.points) for s in self.submeshes])
        self.alpha_q = alpha(pts[..., 0], pts[..., 1])
        alpha.check_bounds(self.alpha_q, pts)
        self.loads = np.stack([assemble_load(s, f, self.rule) for s in self.submeshes])
        self.coarse_loads = np.stack([coarse_element_load(s, f, self.coarse_rule) for s in self.submeshes])
        self.areas = np.stack([s.areas for s in self.submeshes])
        self.gradients = np.stack([s.gradients for s in self.submeshes])
        logger.debug(
            "two-level space: %d elements, m=%d, %d bubble DOFs per element",
            coarse.n_triangles, self.m, len(self.grid.interior),
        )

    @property
    def n_elements(self) -> int:
        return self.coarse.n_triangles

    @property
    def dofs(self) -> int:
        """Free coarse nodes plus all bubble DOFs"""
        return len(self.coarse.free_nodes) + self.n_elements * len(self.grid.interior)

    def zero_bubbles(self) -> List[np.ndarray]:
        return [np.zeros(len(self.grid.interior)) for _ in range(self.n_elements)]

    def composite_nodal(self, uh: np.ndarray, bubbles: Sequence[np.ndarray]) -> np.ndarray:
        nodal = uh[self.coarse.triangles] @ self.grid.bary.T
        nodal[:, self.grid.interior] += np.stack(bubbles)
        return nodal

    def at_quadrature(self, nodal: np.ndarray) -> np.ndarray:
        """Nodal stack -> values at fine quadrature points, (nK, nt, q)"""
        return nodal[:, self.grid.triangles] @ self.rule.points.T

    def kappa(self, u_q: np.ndarray, b: Nonlinearity) -> np.ndarray:
        u_q = np.broadcast_to(u_q, self.alpha_q.shape)
        bq = b(u_q)
        b.check_lower_bound(bq, u_q)
        return self.alpha_q * bq

    def h1(self, nodal: np.ndarray) -> float:
        grads = np.einsum("Ktk,Ktkd->Ktd", nodal[:, self.grid.triangles], self.gradients)
        return float(np.sqrt(np.sum(self.areas * np.sum(grads ** 2, axis=2))))

    def freeze(self, kappa: np.ndarray) -> List[LocalOperator]:
        """One LocalOperator per element, all tagged with one fresh snapshot"""
        snapshot = new_snapshot()
        return [
            freeze_local_operator(
                sub, kappa[K], rule=self.rule,
                load=self.loads[K], coarse_load=self.coarse_loads[K], snapshot=snapshot,
            )
            for K, sub in enumerate(self.submeshes)
        ]

    def lifts(self, operators: Sequence[LocalOperator]) -> List[BubbleLifts]:
        """Local solves, independent per element"""
        n_jobs = -1 if self.threads == 0 else self.threads
        if n_jobs == 1:
            return [compute_lifts(op) for op in operators]
        return Parallel(n_jobs=n_jobs, prefer="threads")(delayed(compute_lifts)(op) for op in operators)

    def coarse_system(self, matrices: np.ndarray, rhs: np.ndarray) -> SparseSystem:
        coarse = self.coarse
        A = assemble_from_local(coarse, matrices)
        F = np.bincount(coarse.triangles.ravel(), weights=rhs.ravel(), minlength=coarse.n_nodes)
        return eliminate_dirichlet(coarse, A, F)

    def recover(self, lifts: Sequence[BubbleLifts], uh: np.ndarray) -> List[np.ndarray]:
        tri = self.coarse.triangles
        return [recover_bubble(lift, uh[tri[K]]) for K, lift in enumerate(lifts)]


class _TwoLevelState(NamedTuple):
    uh: np.ndarray
    bubbles: List[np.ndarray]
    nodal: np.ndarray
    operators: Optional[List[LocalOperator]]


# =============================================================================
# COMPOSITE SOLUTION
# =============================================================================

@dataclass(frozen=True, eq=False)
class CompositeSolution:
    """
    u_r = u_h + u_b: a coarse P1 function plus one bubble vector (interior
    sub-mesh nodes) per coarse element.

    local_operators are the operators the final bubbles were computed
    with, kept for residual checks.
    """
    coarse: DiscreteFunction
    bubbles: Tuple[np.ndarray, ...]
    submeshes: Tuple[SubMesh, ...]
    scheme: str
    iterations: int
    initial_guess: str = "zero"
    local_operators: Optional[Tuple[LocalOperator, ...]] = None

    @property
    def provenance(self) -> dict:
        return {"scheme": self.scheme, "iterations": self.iterations, "initial_guess": self.initial_guess}

    @property
    def m(self) -> int:
        return self.submeshes[0].m

    def local_values(self, K: int) -> np.ndarray:
        """u_h + u_b at the sub-mesh nodes of element K"""
        sub = self.submeshes[K]
        values = sub.coarse_basis @ self.coarse.values[self.coarse.mesh.triangles[K]]
        values[sub.interior_nodes] += self.bubbles[K]
        return values

    def bubble_values(self, K: int) -> np.ndarray:
        full = np.zeros(self.submeshes[K].n_nodes)
        full[self.submeshes[K].interior_nodes] = self.bubbles[K]
        return full

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """Point values of u_h + u_b (nan outside the domain)"""
        mesh = self.coarse.mesh
        owner, bary = mesh.locate(points)
        out = np.full(len(owner), np.nan)
        ok = owner >= 0
        out[ok] = np.einsum("pk,pk->p", bary[ok], self.coarse.values[mesh.triangles[owner[ok]]])
        for K in np.unique(owner[ok]):
            sel = np.flatnonzero(owner == K)
            ids, w = self.submeshes[K].locate(bary[sel])
            out[sel] += np.sum(w * self.bubble_values(K)[ids], axis=1)
        return out

    def to_fine(self, mesh: TriangleMesh) -> DiscreteFunction:
        """Nodal interpolant on another mesh (exact when that mesh is nested in the sub-meshes)"""
        values = self.evaluate(mesh.nodes)
        if np.isnan(values).any():
            raise MeshError("target mesh has nodes outside the coarse domain")
        return DiscreteFunction(mesh, values)

    def merged(self) -> DiscreteFunction:
        """The composite on the global mesh made of all sub-meshes"""
        mesh, local_to_global = merge_submeshes(self.coarse.mesh, self.submeshes)
        values = np.zeros(mesh.n_nodes)
        for K, ids in enumerate(local_to_global):
            values[ids] = self.local_values(K)
        return DiscreteFunction(mesh, values)

    def h1_seminorm(self) -> float:
        total = 0.0
        for K, sub in enumerate(self.submeshes):
            total += h1_seminorm(DiscreteFunction(sub, self.local_values(K))) ** 2
        return float(np.sqrt(total))


def _composite(space: TwoLevelSpace, state: _TwoLevelState, report: SolveReport) -> CompositeSolution:
    return CompositeSolution(
        coarse=DiscreteFunction(space.coarse, state.uh),
        bubbles=tuple(state.bubbles),
        submeshes=tuple(space.submeshes),
        scheme=report.scheme,
        iterations=report.iterations,
        initial_guess=report.initial_guess,
        local_operators=None if state.operators is None else tuple(state.operators),
    )


def composite_prolongation(
    coarse: CoarseMesh,
    submeshes: Sequence[SubMesh],
    fine: TriangleMesh,
    include_bubbles: bool = True,
) -> sp.csr_matrix:
    """
    Sparse map from trial-space coefficients to nodal values on `fine`.

    Columns are the free coarse nodes followed by the interior sub-mesh
    nodes of every element (in element order); with include_bubbles=False
    only the coarse columns exist (the classical space V_h).
    """
    owner, bary = coarse.locate(fine.nodes)
    if (owner < 0).any():
        raise MeshError("fine mesh has nodes outside the coarse mesh")
    free = coarse.free_nodes
    column = np.full(coarse.n_nodes, -1, dtype=np.int64)
    column[free] = np.arange(len(free))

    rows, cols, vals = [], [], []
    for k in range(3):
        c = column[coarse.triangles[owner, k]]
        keep = (c >= 0) & (np.abs(bary[:, k]) > 1e-14)
        rows.append(np.flatnonzero(keep))
        cols.append(c[keep])
        vals.append(bary[keep, k])

    n_cols = len(free)
    if include_bubbles:
        for K, sub in enumerate(submeshes):
            local_column = np.full(sub.n_nodes, -1, dtype=np.int64)
            local_column[sub.interior_nodes] = n_cols + np.arange(sub.n_interior)
            n_cols += sub.n_interior
            sel = np.flatnonzero(owner == K)
            if sel.size == 0:
                continue
            ids, w = sub.locate(bary[sel])
            c = local_column[ids]
            keep = (c >= 0) & (np.abs(w) > 1e-14)
            rows.append(np.broadcast_to(sel[:, None], ids.shape)[keep])
            cols.append(c[keep])
            vals.append(w[keep])

    return sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(fine.n_nodes, n_cols),
    ).tocsr()


# =============================================================================
# RFB DRIVERS
# =============================================================================

def _initial_state(
    space: TwoLevelSpace,
    alpha: CoefficientField,
    b: Nonlinearity,
    f: LoadLike,
    cfg: PicardConfig,
) -> Tuple[_TwoLevelState, str]:
    if cfg.initial_guess is None and cfg.warm_start:
        warm, _ = solve_galerkin(space.coarse, alpha, b, f, replace(cfg, warm_start=False))
        uh, label = warm.values.copy(), "galerkin_warm_start"
    else:
        uh, label = _initial_values(space.coarse, cfg)
    bubbles = space.zero_bubbles()
    return _TwoLevelState(uh, bubbles, space.composite_nodal(uh, bubbles), None), label


def _run_two_level(
    scheme: str,
    space: TwoLevelSpace,
    alpha: CoefficientField,
    b: Nonlinearity,
    f: LoadLike,
    cfg: PicardConfig,
    step: Callable,
    one_shot: bool,
) -> Tuple[CompositeSolution, SolveReport]:
    state, label = _initial_state(space, alpha, b, f, cfg)
    report = SolveReport(scheme=scheme, initial_guess=label)
    state = _picard(
        report, cfg, state, step,
        increment=lambda new, old: space.h1(new.nodal - old.nodal),
        norm=lambda new: space.h1(new.nodal),
        one_shot=one_shot,
    )
    return _composite(space, state, report), report


def _space(coarse, m, alpha, f, cfg, space) -> TwoLevelSpace:
    if space is not None:
        return space
    return TwoLevelSpace(coarse, m, alpha, f, cfg.quad_order, cfg.threads)


def solve_rfb_coupled(
    coarse: CoarseMesh,
    m: int,
    alpha: CoefficientField,
    b: Nonlinearity,
    f: LoadLike,
    cfg: Optional[PicardConfig] = None,
    space: Optional[TwoLevelSpace] = None,
) -> Tuple[CompositeSolution, SolveReport]:
    """
    Fully coupled RFB Picard: freeze alpha b(u_h + u_b), compute lifts,
    condense, solve the coarse system, recover the bubbles.

    Raises:
        MeshError: m < 3
        LocalSolveError: a local problem failed (names the element)
    """
    cfg = cfg or PicardConfig()
    space = _space(coarse, m, alpha, f, cfg, space)

    def step(state: _TwoLevelState) -> _TwoLevelState:
        operators = space.freeze(space.kappa(space.at_quadrature(state.nodal), b))
        lifts = space.lifts(operators)
        parts = [condense(lift, op) for lift, op in zip(lifts, operators)]
        system = space.coarse_system(
            np.stack([op.coarse_matrix + p.matrix for op, p in zip(operators, parts)]),
            np.stack([op.coarse_load + p.rhs for op, p in zip(operators, parts)]),
        )
        uh = _solve_symmetric(system, cfg)
        bubbles = space.recover(lifts, uh)
        return _TwoLevelState(uh, bubbles, space.composite_nodal(uh, bubbles), operators)

    return _run_two_level("rfb_coupled", space, alpha, b, f, cfg, step, one_shot=b.is_constant)


def solve_rfb_decoupled(
    coarse: CoarseMesh,
    m: int,
    alpha: CoefficientField,
    b: Nonlinearity,
    f: LoadLike,
    cfg: Optional[PicardConfig] = None,
    space: Optional[TwoLevelSpace] = None,
) -> Tuple[CompositeSolution, SolveReport]:
    """
    Decoupled RFB Picard.

    Step 1: coarse equation for u_h^n with the coefficient at
            u_h^{n-1} + u_b^{n-1} and u_b^{n-1} as known data.
    Step 2: local problems with the coefficient at u_h^n + u_b^{n-1}.

    The first local step starts from a zero bubble.
    """
    cfg = cfg or PicardConfig()
    space = _space(coarse, m, alpha, f, cfg, space)
    tri = space.coarse.triangles

    def step(state: _TwoLevelState) -> _TwoLevelState:
        operators = space.freeze(space.kappa(space.at_quadrature(state.nodal), b))
        system = space.coarse_system(
            np.stack([op.coarse_matrix for op in operators]),
            np.stack([op.coarse_load - op.coupling.T @ ub for op, ub in zip(operators, state.bubbles)]),
        )
        uh = _solve_symmetric(system, cfg)

        mid = space.composite_nodal(uh, state.bubbles)
        local_ops = space.freeze(space.kappa(space.at_quadrature(mid), b))
        lifts = space.lifts(local_ops)
        bubbles = [recover_bubble(lift, uh[tri[K]]) for K, lift in enumerate(lifts)]
        return _TwoLevelState(uh, bubbles, space.composite_nodal(uh, bubbles), local_ops)

    return _run_two_level("rfb_decoupled", space, alpha, b, f, cfg, step, one_shot=False)


def _check_sample_point(sample_point) -> np.ndarray:
    lam = np.asarray(sample_point, dtype=float)
    if lam.shape != (3,) or not np.isclose(lam.sum(), 1.0) or (lam <= 0).any():
        raise ConfigError(
            f"sample point must be barycentric coordinates of an interior point, got {sample_point}",
            key="reduced.sample_point",
        )
    return lam


def solve_rfb_reduced(
    coarse: CoarseMesh,
    m: int,
    alpha: CoefficientField,
    b: Nonlinearity,
    f: LoadLike,
    cfg: Optional[PicardConfig] = None,
    coefficient_mode: str = "field",
    sample_point: Sequence[float] = CENTROID,
    space: Optional[TwoLevelSpace] = None,
) -> Tuple[CompositeSolution, SolveReport]:
    """
    Reduced RFB: local problems see b(u_h) only, the global equation the
    full b(u_h + u_b).

    coefficient_mode:
        field            b(u_h(x)) at every fine quadrature point
        element_average  b(mean of u_h over K)
        point_sample     b(u_h(x_K)), x_K given by `sample_point`
                         (barycentric, centroid by default)

    Local lifts and global operator carry different coefficients, so the
    coarse system is non-symmetric and is solved by sparse LU.
    """
    try:
        coefficient_mode = ReducedMode(coefficient_mode)
    except ValueError:
        raise ConfigError(
            f"reduced.mode must be one of {REDUCED_MODES}, got {coefficient_mode!r}", key="reduced.mode"
        ) from None
    lam = _check_sample_point(sample_point)
    cfg = cfg or PicardConfig()
    space = _space(coarse, m, alpha, f, cfg, space)
    tri = space.coarse.triangles

    def local_argument(uh: np.ndarray) -> np.ndarray:
        if coefficient_mode is ReducedMode.FIELD:
            return space.at_quadrature(space.composite_nodal(uh, space.zero_bubbles()))
        if coefficient_mode is ReducedMode.ELEMENT_AVERAGE:
            return uh[tri].mean(axis=1)[:, None, None]
        return (uh[tri] @ lam)[:, None, None]

    def step(state: _TwoLevelState) -> _TwoLevelState:
        local_ops = space.freeze(space.kappa(local_argument(state.uh), b))
        global_ops = space.freeze(space.kappa(space.at_quadrature(state.nodal), b))
        lifts = space.lifts(local_ops)
        parts = [couple(lift, op) for lift, op in zip(lifts, global_ops)]
        system = space.coarse_system(
            np.stack([op.coarse_matrix + p.matrix for op, p in zip(global_ops, parts)]),
            np.stack([op.coarse_load + p.rhs for op, p in zip(global_ops, parts)]),
        )
        uh = _solve_general(system)
        bubbles = space.recover(lifts, uh)
        return _TwoLevelState(uh, bubbles, space.composite_nodal(uh, bubbles), local_ops)

    solution, report = _run_two_level(
        "rfb_reduced", space, alpha, b, f, cfg, step, one_shot=b.is_constant
    )
    return solution, report


# =============================================================================
# A-POSTERIORI CHECKS
# =============================================================================

def nonlinear_residual(
    solution: Union[DiscreteFunction, CompositeSolution],
    alpha: CoefficientField,
    b: Nonlinearity,
    f: LoadLike,
    quad_order: int = 2,
) -> float:
    """
    Residual of the discrete nonlinear equations at a given solution.

    The coefficient is re-frozen at the solution itself and the form is
    tested against every active basis function (free coarse hats and, for
    composites, all bubble hats). Returned as max |residual| / max |load|.
    """
    if isinstance(solution, CompositeSolution):
        coarse = solution.coarse.mesh
        space = TwoLevelSpace(coarse, solution.m, alpha, f, quad_order)
        nodal = np.stack([solution.local_values(K) for K in range(space.n_elements)])
        operators = space.freeze(space.kappa(space.at_quadrature(nodal), b))
        coarse_res = np.zeros((space.n_elements, 3))
        bubble_res = []
        for K, op in enumerate(operators):
            Az = op.stiffness @ nodal[K]
            coarse_res[K] = op.coarse_basis.T @ Az - op.coarse_load
            bubble_res.append(Az[op.interior] - op.load[op.interior])
        r_h = np.bincount(coarse.triangles.ravel(), weights=coarse_res.ravel(), minlength=coarse.n_nodes)
        r_h = r_h[coarse.free_nodes]
        scale = max(np.abs(space.coarse_loads).max(), np.abs(space.loads).max(), 1e-300)
        worst = max(np.abs(r_h).max(initial=0.0), max(np.abs(r).max(initial=0.0) for r in bubble_res))
        return float(worst / scale)

    mesh = solution.mesh
    rule = quad_rule(choose_quad_order(alpha.epsilon, mesh.h, quad_order, warn=False))
    pts = mesh.quadrature_points(rule.points)
    u = solution.values
    kappa = alpha(pts[..., 0], pts[..., 1]) * b(u[mesh.triangles] @ rule.points.T)
    load = assemble_load(mesh, f, rule)
    residual = (assemble_weighted_stiffness(mesh, kappa, rule) @ u - load)[mesh.free_nodes]
    return float(np.abs(residual).max(initial=0.0) / max(np.abs(load).max(), 1e-300))


@dataclass(frozen=True)
class EnergyCheck:
    """alpha0 b0 |u|_H1^2 against the discrete work (f, u)"""
    lhs: float
    rhs: float

    def holds(self, rel_slack: float = 1e-6) -> bool:
        return bool(self.lhs <= self.rhs * (1.0 + rel_slack) + 1e-14)


def energy_bound(
    solution: Union[DiscreteFunction, CompositeSolution],
    alpha: CoefficientField,
    b: Nonlinearity,
    f: LoadLike,
    quad_order: int = 2,
) -> EnergyCheck:
    """
    Coercivity bound alpha0 b0 |u|^2 <= (f, u).

    (f, u) is evaluated with the same load vectors the solver used.
    """
    c = alpha.alpha0 * b.b0
    if isinstance(solution, CompositeSolution):
        coarse = solution.coarse.mesh
        space = TwoLevelSpace(coarse, solution.m, alpha, f, quad_order)
        uh = solution.coarse.values
        work = sum(
            float(space.coarse_loads[K] @ uh[coarse.triangles[K]])
            + float(space.loads[K][space.grid.interior] @ solution.bubbles[K])
            for K in range(space.n_elements)
        )
        return EnergyCheck(lhs=c * solution.h1_seminorm() ** 2, rhs=work)

    mesh = solution.mesh
    rule = quad_rule(choose_quad_order(alpha.epsilon, mesh.h, quad_order, warn=False))
    work = float(assemble_load(mesh, f, rule) @ solution.values)
    return EnergyCheck(lhs=c * h1_seminorm(solution) ** 2, rhs=work)
