"""
=============================================================================
ACCEPTANCE - Built-in property and oracle checks (`bubblefem verify`)
=============================================================================

    1  kirchhoff    Picard reference and Kirchhoff oracle converge together
    2  collapse     constant coefficients: RFB coarse part == Galerkin
    3  condense     condensed solve == monolithic two-level solve
    4  rates        manufactured solution: H1 rate ~1, L2 rate ~2
    5  contraction  small data: Picard increment ratios <= 0.9
    6  residual     converged RFB solution is residual-free on every element
    7  multiscale   oscillatory alpha, H > eps: RFB beats Galerkin
    8  agreement    coupled == decoupled; reduced(field) gap shrinks with H
    9  energy       alpha0 b0 |u|^2 <= (f, u) on every converged run above

quick=True shrinks the meshes so the whole suite runs in seconds; the
thresholds stay the same.
=============================================================================
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Any, Callable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .analysis import StudyConfig, estimate_rate, run_study
from .bubble import LOCAL_TOL, condense, residual_free_check, solve_two_level_monolithic
from .coefficients import (
    CoefficientField,
    Nonlinearity,
    make_constant_alpha,
    make_nonlinearity_constant,
    make_nonlinearity_sin,
    make_periodic_alpha,
)
from .errors import BubbleFEMError
from .fem_core import DiscreteFunction, error_norms, l2_norm, solve_spd
from .kirchhoff_oracle import sinsin_solution, solve_kirchhoff
from .mesh import generate_structured
from .problems import Problem, sinsin_load
from .solvers import (
    PicardConfig,
    TwoLevelSpace,
    energy_bound,
    nonlinear_residual,
    solve_fine_reference,
    solve_galerkin,
    solve_rfb_coupled,
    solve_rfb_decoupled,
    solve_rfb_reduced,
)

logger = logging.getLogger(__name__)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


@dataclass
class _EnergyCase:
    label: str
    solution: Any
    alpha: CoefficientField
    b: Nonlinearity
    f: Any


@dataclass
class _Suite:
    quick: bool
    threads: int = 1
    energy_cases: List[_EnergyCase] = field(default_factory=list)

    def picard(self, tol: float = 1e-10, **kwargs) -> PicardConfig:
        return PicardConfig(tol=tol, max_iter=100, linear_solver="direct", threads=self.threads, **kwargs)

    def keep(self, label, solution, report, alpha, b, f) -> None:
        if report.converged:
            self.energy_cases.append(_EnergyCase(label, solution, alpha, b, f))


# =============================================================================
# CHECKS
# =============================================================================

def check_kirchhoff(suite: _Suite) -> CheckResult:
    alpha, b = make_constant_alpha(1.0), make_nonlinearity_sin()
    exact = sinsin_solution()
    f = exact.rhs(alpha, b)
    sizes = [8, 16, 32] if suite.quick else [32, 64, 128]

    gaps, ref_errors, kir_errors = [], [], []
    for n in sizes:
        mesh = generate_structured(n)
        u_ref, report = solve_fine_reference(mesh, alpha, b, f, suite.picard())
        u_kir = solve_kirchhoff(mesh, alpha, b, f, method="direct")
        suite.keep(f"fine_reference n={n}", u_ref, report, alpha, b, f)
        gaps.append(l2_norm(DiscreteFunction(mesh, u_ref.values - u_kir.values)))
        ref_errors.append(error_norms(u_ref, exact.u, exact.grad)[0])
        kir_errors.append(error_norms(u_kir, exact.u, exact.grad)[0])

    hs = [1.0 / n for n in sizes]
    rates = estimate_rate(gaps, hs)
    shrink = all(
        errs[k] <= 1.5 * errs[k - 1] / 4.0
        for errs in (ref_errors, kir_errors)
        for k in range(1, len(sizes))
    )
    passed = min(rates) >= 1.8 and shrink
    detail = (
        f"gap rates {[round(r, 3) for r in rates]}, "
        f"reference L2 {[f'{e:.2e}' for e in ref_errors]}, oracle L2 {[f'{e:.2e}' for e in kir_errors]}"
    )
    return CheckResult("kirchhoff", passed, detail)


def check_collapse(suite: _Suite) -> CheckResult:
    alpha, b = make_constant_alpha(1.0), make_nonlinearity_constant(2.0)
    f = 1.0
    coarse = generate_structured(4)
    m = 4 if suite.quick else 8
    cfg = suite.picard()

    u_gal, rep_gal = solve_galerkin(coarse, alpha, b, f, cfg)
    composite, rep_rfb = solve_rfb_coupled(coarse, m, alpha, b, f, cfg)
    suite.keep("galerkin collapse", u_gal, rep_gal, alpha, b, f)
    suite.keep("rfb_coupled collapse", composite, rep_rfb, alpha, b, f)
    nodal_gap = float(np.abs(composite.coarse.values - u_gal.values).max())

    space = TwoLevelSpace(coarse, m, alpha, f)
    operators = space.freeze(space.kappa(np.zeros(1), b))
    lifts = space.lifts(operators)
    corrections = 0.0
    for lift, op in zip(lifts, operators):
        part = condense(lift, op)
        corrections = max(corrections, np.abs(part.matrix).max(), np.abs(part.rhs).max())

    passed = nodal_gap <= 1e-8 and corrections <= 1e-10
    return CheckResult("collapse", passed, f"max nodal gap {nodal_gap:.2e}, max correction {corrections:.2e}")


def _condensation_gap(n: int, m: int) -> float:
    alpha = make_periodic_alpha(1.0, 0.5, 0.25)
    coarse = generate_structured(n)
    space = TwoLevelSpace(coarse, m, alpha, 1.0)
    operators = space.freeze(space.alpha_q)
    lifts = space.lifts(operators)
    parts = [condense(lift, op) for lift, op in zip(lifts, operators)]
    system = space.coarse_system(
        np.stack([op.coarse_matrix + p.matrix for op, p in zip(operators, parts)]),
        np.stack([op.coarse_load + p.rhs for op, p in zip(operators, parts)]),
    )
    uh = system.expand(solve_spd(system, method="dense"))
    bubbles = space.recover(lifts, uh)

    uh_mono, bubbles_mono = solve_two_level_monolithic(coarse, operators)
    gap = float(np.abs(uh - uh_mono).max())
    for mine, theirs in zip(bubbles, bubbles_mono):
        gap = max(gap, float(np.abs(mine - theirs).max()))
    return gap


def check_condensation(suite: _Suite) -> CheckResult:
    gaps = {n: _condensation_gap(n, 4) for n in (1, 2)}
    passed = max(gaps.values()) <= 1e-10
    detail = ", ".join(f"{2 * n * n} elements: {g:.2e}" for n, g in gaps.items())
    return CheckResult("condense", passed, detail)


def check_rates(suite: _Suite) -> CheckResult:
    alpha, b = make_periodic_alpha(1.0, 0.3, 1.0), make_nonlinearity_sin()
    exact = sinsin_solution()
    f = exact.rhs(alpha, b)
    sizes = [8, 16, 32] if suite.quick else [16, 32, 64]
    l2, h1 = [], []
    for n in sizes:
        u, report = solve_fine_reference(generate_structured(n), alpha, b, f, suite.picard())
        suite.keep(f"manufactured n={n}", u, report, alpha, b, f)
        e_l2, e_h1 = error_norms(u, exact.u, exact.grad)
        l2.append(e_l2)
        h1.append(e_h1)
    hs = [1.0 / n for n in sizes]
    rate_l2, rate_h1 = estimate_rate(l2, hs), estimate_rate(h1, hs)
    passed = all(0.85 <= r <= 1.15 for r in rate_h1) and all(1.8 <= r <= 2.2 for r in rate_l2)
    return CheckResult(
        "rates", passed,
        f"rate_h1 {[round(r, 3) for r in rate_h1]}, rate_l2 {[round(r, 3) for r in rate_l2]}",
    )


def _small_data() -> Tuple[CoefficientField, Nonlinearity, Callable]:
    return make_periodic_alpha(1.0, 0.3, 1.0), make_nonlinearity_sin(), sinsin_load(0.1)


def _eventually_monotone(ratios: Sequence[float], rel_slack: float = 1e-3) -> bool:
    """Last three ratios non-increasing, up to rounding drift in the increments"""
    tail = list(ratios)[-3:]
    return all(later <= earlier * (1.0 + rel_slack) for earlier, later in zip(tail, tail[1:]))


def check_contraction(suite: _Suite) -> CheckResult:
    alpha, b, f = _small_data()
    coarse = generate_structured(4 if suite.quick else 8)
    m = 4 if suite.quick else 8
    cfg = suite.picard()
    runs = {
        "galerkin": solve_galerkin(coarse, alpha, b, f, cfg),
        "fine_reference": solve_fine_reference(generate_structured(16 if suite.quick else 32), alpha, b, f, cfg),
        "rfb_coupled": solve_rfb_coupled(coarse, m, alpha, b, f, cfg),
        "rfb_decoupled": solve_rfb_decoupled(coarse, m, alpha, b, f, cfg),
        "rfb_reduced": solve_rfb_reduced(coarse, m, alpha, b, f, cfg),
    }
    failures, finals = [], {}
    for name, (solution, report) in runs.items():
        suite.keep(f"{name} small data", solution, report, alpha, b, f)
        finals[name] = report.final_ratio
        ratio_ok = not report.contraction_estimates or report.final_ratio <= 0.9
        if not (report.converged and ratio_ok and _eventually_monotone(report.contraction_estimates)):
            failures.append(name)
    detail = ", ".join(f"{k}: {v:.3f}" for k, v in finals.items())
    if failures:
        detail += f"; failing: {failures}"
    return CheckResult("contraction", not failures, detail)


def check_residual_free(suite: _Suite) -> CheckResult:
    alpha, b = make_periodic_alpha(1.0, 0.5, 0.125), make_nonlinearity_sin()
    coarse = generate_structured(4)
    tol = 1e-10
    composite, report = solve_rfb_coupled(coarse, 8, alpha, b, 1.0, suite.picard(tol=tol))
    suite.keep("rfb_coupled residual", composite, report, alpha, b, 1.0)
    tri = coarse.triangles
    worst = max(
        residual_free_check(op, composite.coarse.values[tri[K]], composite.bubbles[K])
        for K, op in enumerate(composite.local_operators)
    )
    fixed_point = nonlinear_residual(composite, alpha, b, 1.0)
    passed = report.converged and worst <= 10 * LOCAL_TOL and fixed_point <= 10 * tol
    detail = (
        f"max local residual {worst:.2e} (limit {10 * LOCAL_TOL:.0e}), "
        f"fixed-point residual {fixed_point:.2e} (limit {10 * tol:.0e})"
    )
    return CheckResult("residual", passed, detail)


def check_multiscale(suite: _Suite) -> CheckResult:
    eps = 1.0 / 8.0 if suite.quick else 1.0 / 16.0
    n = 4 if suite.quick else 8
    alpha, b = make_periodic_alpha(1.0, 0.9, eps), make_nonlinearity_sin()
    problem = Problem(alpha, b, 1.0)
    cfg = StudyConfig(
        schemes=["galerkin", "rfb_coupled"],
        ns=[n],
        m=16,
        eps_list=[eps],
        problem=lambda _eps: problem,
        picard=suite.picard(tol=1e-8),
        ref_levels=5,
    )
    rows = {row.scheme: row for row in run_study(cfg)}
    gal, rfb = rows["galerkin"], rows["rfb_coupled"]
    if gal.failure or rfb.failure:
        return CheckResult("multiscale", False, f"failures: {gal.failure} / {rfb.failure}")
    passed = rfb.h1_error <= 0.7 * gal.h1_error and rfb.cea_ratio <= 20.0
    detail = (
        f"h1 rfb {rfb.h1_error:.3e} vs galerkin {gal.h1_error:.3e} "
        f"(ratio {rfb.h1_error / gal.h1_error:.3f}), cea {rfb.cea_ratio:.2f}"
    )
    return CheckResult("multiscale", passed, detail)


class _Agreement(NamedTuple):
    converged: bool
    coupled_decoupled: float
    coupled_reduced: float
    decoupled_reduced: float


def _agreement(suite: _Suite, n: int, m: int, tol: float) -> _Agreement:
    """Relative H1 distances between the three RFB fixed points on one coarse mesh"""
    alpha, b = make_periodic_alpha(1.0, 0.3, 1.0), make_nonlinearity_sin()
    f = sinsin_load(1.0)
    coarse = generate_structured(n)
    cfg = suite.picard(tol=tol)
    space = TwoLevelSpace(coarse, m, alpha, f)
    coupled, rc = solve_rfb_coupled(coarse, m, alpha, b, f, cfg, space=space)
    decoupled, rd = solve_rfb_decoupled(coarse, m, alpha, b, f, cfg, space=space)
    reduced, rr = solve_rfb_reduced(coarse, m, alpha, b, f, cfg, "field", space=space)
    for label, sol, rep in (("coupled", coupled, rc), ("decoupled", decoupled, rd), ("reduced", reduced, rr)):
        suite.keep(f"rfb_{label} agreement n={n}", sol, rep, alpha, b, f)

    def nodal(sol):
        return np.stack([sol.local_values(K) for K in range(space.n_elements)])

    norm = space.h1(nodal(coupled))
    return _Agreement(
        converged=rc.converged and rd.converged and rr.converged,
        coupled_decoupled=space.h1(nodal(coupled) - nodal(decoupled)) / norm,
        coupled_reduced=space.h1(nodal(coupled) - nodal(reduced)) / norm,
        decoupled_reduced=space.h1(nodal(decoupled) - nodal(reduced)) / norm,
    )


def check_agreement(suite: _Suite) -> CheckResult:
    """
    coupled and decoupled share a fixed point; reduced(field) solves other
    local problems, so its distance to them must shrink as H -> 0.
    """
    tol = 1e-10
    sizes = (2, 4) if suite.quick else (4, 8)
    m = 4 if suite.quick else 8
    runs = [_agreement(suite, n, m, tol) for n in sizes]
    d_cd = max(r.coupled_decoupled for r in runs)
    d_red = [max(r.coupled_reduced, r.decoupled_reduced) for r in runs]
    shrinking = all(later < earlier for earlier, later in zip(d_red, d_red[1:]))
    passed = all(r.converged for r in runs) and d_cd <= 10 * tol and shrinking
    detail = (
        f"relative H1: coupled-decoupled {d_cd:.2e} (limit {10 * tol:.0e}), "
        "reduced distance " + ", ".join(f"n={n}: {d:.2e}" for n, d in zip(sizes, d_red))
    )
    return CheckResult("agreement", passed, detail)


def check_energy(suite: _Suite) -> CheckResult:
    violations = []
    for case in suite.energy_cases:
        bound = energy_bound(case.solution, case.alpha, case.b, case.f)
        if not bound.holds(1e-6):
            violations.append(f"{case.label} ({bound.lhs:.4e} > {bound.rhs:.4e})")
    passed = bool(suite.energy_cases) and not violations
    detail = f"{len(suite.energy_cases)} converged runs checked"
    if violations:
        detail += "; violations: " + ", ".join(violations)
    return CheckResult("energy", passed, detail)


CHECKS: List[Tuple[str, Callable[[_Suite], CheckResult]]] = [
    ("kirchhoff", check_kirchhoff),
    ("collapse", check_collapse),
    ("condense", check_condensation),
    ("rates", check_rates),
    ("contraction", check_contraction),
    ("residual", check_residual_free),
    ("multiscale", check_multiscale),
    ("agreement", check_agreement),
    ("energy", check_energy),
]


def run_acceptance(
    quick: bool = False,
    threads: int = 1,
    only: Optional[Sequence[str]] = None,
) -> List[CheckResult]:
    """
    Run the checks in order. An exception inside a check fails that check
    only. The energy check covers whatever ran before it.
    """
    suite = _Suite(quick=quick, threads=threads)
    results = []
    for name, check in CHECKS:
        if only is not None and name not in only:
            continue
        start = time.perf_counter()
        try:
            result = check(suite)
        except BubbleFEMError as e:
            result = CheckResult(name, False, f"{type(e).__name__}: {e}")
        result.seconds = time.perf_counter() - start
        logger.info("%s %s (%.1fs): %s", "✅" if result.passed else "❌", name, result.seconds, result.detail)
        results.append(result)
    return results
