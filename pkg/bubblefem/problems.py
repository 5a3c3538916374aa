"""
Named problem catalogue: turns the problem.* configuration keys into a
coefficient field, a nonlinearity and a right-hand side.

    problem.f = one           f = scale
    problem.f = zero          f = 0
    problem.f = sinsin        f = scale 2 pi^2 sin(pi x) sin(pi y)
    problem.f = manufactured  f built so that u = scale sin(pi x) sin(pi y)
                              solves the nonlinear problem exactly
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from .coefficients import (
    CoefficientField,
    Nonlinearity,
    make_constant_alpha,
    make_layered_alpha,
    make_nonlinearity_constant,
    make_nonlinearity_sin,
    make_periodic_alpha,
)
from .config import RunConfig
from .errors import ConfigError
from .kirchhoff_oracle import ManufacturedSolution, sinsin_solution

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Problem:
    alpha: CoefficientField
    b: Nonlinearity
    f: Union[Callable, float]
    exact: Optional[ManufacturedSolution] = None

    @property
    def label(self) -> str:
        return f"alpha={self.alpha.name} eps={self.alpha.epsilon:g} b={self.b.name}"


def sinsin_load(scale: float = 1.0) -> Callable:
    """-laplace of scale sin(pi x) sin(pi y)"""
    c = scale * 2.0 * np.pi ** 2

    def f(x, y):
        return c * np.sin(np.pi * x) * np.sin(np.pi * y)

    return f


def build_alpha(cfg: RunConfig, eps: Optional[float] = None) -> CoefficientField:
    eps = cfg.eps if eps is None else eps
    if cfg.alpha == "periodic":
        return make_periodic_alpha(cfg.a0, cfg.rho, eps)
    if cfg.alpha == "layered":
        return make_layered_alpha(cfg.p, eps)
    return make_constant_alpha(cfg.a0)


def build_nonlinearity(cfg: RunConfig) -> Nonlinearity:
    if cfg.b == "sin":
        return make_nonlinearity_sin()
    return make_nonlinearity_constant(cfg.b_c)


def build_problem(cfg: RunConfig, eps: Optional[float] = None) -> Problem:
    """
    Problem for the configured keys (eps overrides problem.eps in studies).

    Raises:
        ConfigError: manufactured load requested for a field without an
                     analytic gradient
    """
    alpha = build_alpha(cfg, eps)
    b = build_nonlinearity(cfg)
    if cfg.f == "one":
        return Problem(alpha, b, float(cfg.f_scale))
    if cfg.f == "zero":
        return Problem(alpha, b, 0.0, exact=None)
    if cfg.f == "sinsin":
        return Problem(alpha, b, sinsin_load(cfg.f_scale))

    exact = sinsin_solution(cfg.f_scale)
    try:
        f = exact.rhs(alpha, b)
    except ValueError as e:
        raise ConfigError(str(e), key="problem.f") from e
    logger.debug("manufactured load for %s", exact.name)
    return Problem(alpha, b, f, exact=exact)
