"""
bubblefem Command Line Interface

Usage:
    bubblefem solve  --config run.cfg [--out results/] [--threads 4]
    bubblefem study  --config study.cfg [--out results/]
    bubblefem verify [--quick]
    bubblefem --help

Exit codes:
    0  success
    1  acceptance failure (verify) or another solver failure
    2  configuration error
    3  Picard iteration did not converge
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from . import __version__
from .acceptance import run_acceptance
from .analysis import StudyConfig, epsilon_spreads, run_scheme, run_study, write_csv
from .config import RunConfig, load_config
from .errors import BubbleFEMError, ConfigError, ConvergenceError
from .mesh import generate_structured, write_mesh
from .problems import build_problem
from .solvers import CompositeSolution, energy_bound

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_NOT_CONVERGED = 3

DEFAULT_OUT = "bubblefem_out"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bubblefem",
        description="bubblefem - Residual-free bubble finite elements for oscillatory nonlinear diffusion",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default=DEFAULT_OUT, help=f"Output directory (default: {DEFAULT_OUT})")
    common.add_argument("--threads", type=int, default=1, help="Worker threads for element loops (0 = auto)")
    common.add_argument("-v", "--verbose", action="store_true", help="Debug logging")

    subparsers = parser.add_subparsers(dest="command", help="Commands")

    solve_parser = subparsers.add_parser("solve", parents=[common], help="One scheme on one mesh")
    solve_parser.add_argument("--config", required=True, help="Flat key = value config file")

    study_parser = subparsers.add_parser("study", parents=[common], help="Convergence study to CSV")
    study_parser.add_argument("--config", required=True, help="Flat key = value config file")
    study_parser.add_argument("--progress", action="store_true", help="Show a progress bar")

    verify_parser = subparsers.add_parser("verify", parents=[common], help="Built-in acceptance suite")
    verify_parser.add_argument("--quick", action="store_true", help="Reduced mesh sizes")

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main CLI entry point"""
    parser = build_parser()
    args = parser.parse_args(argv)

    logging.basicConfig(
        level=logging.DEBUG if getattr(args, "verbose", False) else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    if args.command is None:
        parser.print_help()
        return EXIT_CONFIG
    if args.threads < 0:
        print("❌ --threads must be >= 0", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.command == "solve":
            return run_solve(args)
        if args.command == "study":
            return run_study_command(args)
        return run_verify(args)
    except ConfigError as e:
        print(f"❌ Configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except ConvergenceError as e:
        print(f"⚠️ {e}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    except BubbleFEMError as e:
        print(f"❌ {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_FAILURE


def _prepare_out(args, config: RunConfig) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.effective.txt").write_text(config.to_flat(), encoding="utf-8")
    return out


def run_solve(args) -> int:
    config = load_config(args.config)
    out = _prepare_out(args, config)
    problem = build_problem(config)
    mesh = generate_structured(config.n)

    solution, report, dofs = run_scheme(
        config.scheme, mesh, config.m, problem, config.picard(args.threads),
        config.reduced_mode, config.sample_point,
    )

    if isinstance(solution, CompositeSolution):
        dump = solution.merged()
    else:
        dump = solution
    write_mesh(dump.mesh, out / "solution.txt", dump.values)

    energy = energy_bound(solution, problem.alpha, problem.b, problem.f, config.quad_order)
    summary = report.to_dict()
    summary.update({
        "n": config.n,
        "m": config.m,
        "eps": config.eps,
        "dofs": dofs,
        "energy_lhs": float(energy.lhs),
        "energy_rhs": float(energy.rhs),
        "energy_bound_holds": energy.holds(),
    })
    (out / "report.json").write_text(json.dumps(summary, indent=2), encoding="utf-8")

    print("\n" + "=" * 60)
    print(f"BUBBLEFEM SOLVE: {config.scheme}")
    print("=" * 60)
    status = "✅ CONVERGED" if report.converged else "⚠️ NOT CONVERGED"
    print(f"   Status:      {status}")
    print(f"   Iterations:  {report.iterations}")
    print(f"   Final ratio: {report.final_ratio:.4f}")
    print(f"   Unknowns:    {dofs}")
    print(f"   |u|_H1:      {report.solution_norm:.6e}")
    print(f"   Output:      {out}")
    print("=" * 60)
    report.raise_for_convergence()
    return EXIT_OK


def run_study_command(args) -> int:
    config = load_config(args.config)
    out = _prepare_out(args, config)
    study = StudyConfig(
        schemes=list(config.study_schemes),
        ns=list(config.study_n),
        m=config.m,
        eps_list=list(config.study_eps),
        problem=lambda eps: build_problem(config, eps),
        picard=config.picard(args.threads),
        ref_levels=config.ref_levels,
        reduced_mode=config.reduced_mode,
        sample_point=config.sample_point,
        progress=args.progress,
    )
    rows = run_study(study)
    path = write_csv(rows, out / "study.csv")

    print("\n" + "=" * 60)
    print("BUBBLEFEM STUDY")
    print("=" * 60)
    for row in rows:
        mark = "✅" if row.converged and row.failure is None else "⚠️"
        print(f"   {mark} {row.scheme:<15} n={row.n:<4} eps={row.eps:<8g} h1={row.h1_error:.3e} cea={row.cea_ratio:.2f}")
        if row.failure:
            print(f"      {row.failure}")
    if len(study.eps_list) > 1:
        print("   eps robustness (h1 error max/min over eps):")
        for (scheme, n), spread in epsilon_spreads(rows).items():
            print(f"      {scheme:<15} n={n:<4} {spread:.3f}")
    print(f"   CSV: {path}")
    print("=" * 60)
    if any(r.failure for r in rows):
        return EXIT_FAILURE
    return EXIT_OK if all(r.converged for r in rows) else EXIT_NOT_CONVERGED


def run_verify(args) -> int:
    results = run_acceptance(quick=args.quick, threads=args.threads)
    print("\n" + "=" * 60)
    print("BUBBLEFEM ACCEPTANCE" + (" (quick)" if args.quick else ""))
    print("=" * 60)
    for r in results:
        print(f"   {'✅' if r.passed else '❌'} {r.name:<12} {r.seconds:7.1f}s  {r.detail}")
    passed = sum(r.passed for r in results)
    print(f"\n   {passed}/{len(results)} checks passed")
    print("=" * 60)
    return EXIT_OK if passed == len(results) else EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
