"""
=============================================================================
COEFFICIENTS - Oscillatory diffusion fields and the nonlinearity b(u)
=============================================================================

PROBLEM CLASS:
    -div( alpha_eps(x) b(u) grad u ) = f    in the unit square
                                  u = 0    on the boundary

HYPOTHESES CARRIED BY THE TYPES:
    0 < alpha0 <= alpha_eps(x) <= alpha1        (CoefficientField)
    0 < b0     <= b(t)           for all t      (Nonlinearity)

KIRCHHOFF ANTIDERIVATIVE:
    btilde(t) = integral of b from 0 to t,  btilde(0) = 0
    btilde' = b >= b0 > 0, so btilde is a bijection and has an inverse.
    When no closed form is known, btilde is integrated adaptively and
    its inverse is found by safeguarded Newton (Brent fallback).
=============================================================================
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import integrate, optimize

from .errors import CoefficientBoundsError, InversionError

logger = logging.getLogger(__name__)

ArrayFunc = Callable[..., np.ndarray]

# Safeguards for the inverse Kirchhoff transform
INVERSE_TOL = 1e-13
INVERSE_MAX_ITER = 100

# Relative slack when checking sampled values against the declared bounds
BOUNDS_SLACK = 1e-12


# =============================================================================
# DIFFUSION FIELD alpha_eps
# =============================================================================

@dataclass(frozen=True)
class CoefficientField:
    """
    Scalar diffusion field with declared bounds and oscillation scale.

    epsilon is math.inf for fields that do not oscillate. gradient, when
    present, returns the analytic gradient with a trailing axis of size 2
    (needed for manufactured right-hand sides).
    """
    evaluate: ArrayFunc
    alpha0: float
    alpha1: float
    epsilon: float = math.inf
    gradient: Optional[ArrayFunc] = None
    name: str = "custom"

    def __post_init__(self):
        if not self.alpha0 > 0:
            raise CoefficientBoundsError(f"alpha0 must be positive, got {self.alpha0}")
        if self.alpha1 < self.alpha0:
            raise CoefficientBoundsError(
                f"alpha1={self.alpha1} is below alpha0={self.alpha0}"
            )
        if not self.epsilon > 0:
            raise CoefficientBoundsError(f"epsilon must be positive, got {self.epsilon}")

    def __call__(self, x, y) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return np.broadcast_to(self.evaluate(x, y), np.broadcast(x, y).shape).astype(float)

    @property
    def is_oscillatory(self) -> bool:
        return math.isfinite(self.epsilon)

    def check_bounds(self, values: np.ndarray, points: Optional[np.ndarray] = None) -> None:
        """Hard failure if any sampled value leaves [alpha0, alpha1]"""
        values = np.asarray(values)
        slack = BOUNDS_SLACK * self.alpha1
        bad = (values < self.alpha0 - slack) | (values > self.alpha1 + slack)
        if bad.any():
            k = int(np.flatnonzero(bad.ravel())[0])
            where = None if points is None else np.asarray(points).reshape(-1, 2)[k]
            value = float(values.ravel()[k])
            raise CoefficientBoundsError(
                f"alpha={value:.6g} outside [{self.alpha0:.6g}, {self.alpha1:.6g}] at point {where}",
                point=where,
                value=value,
            )


def make_periodic_alpha(a0: float, rho: float, eps: float) -> CoefficientField:
    """
    alpha(x, y) = a0 (1 + rho sin(2 pi x/eps) sin(2 pi y/eps))

    Bounds a0 (1 - rho) and a0 (1 + rho); rho must lie in [0, 1).
    """
    if not a0 > 0:
        raise CoefficientBoundsError(f"a0 must be positive, got {a0}")
    if not 0 <= rho < 1:
        raise CoefficientBoundsError(f"rho must satisfy 0 <= rho < 1 (positivity), got {rho}")
    if not eps > 0:
        raise CoefficientBoundsError(f"eps must be positive, got {eps}")
    k = 2.0 * np.pi / eps

    def evaluate(x, y):
        return a0 * (1.0 + rho * np.sin(k * x) * np.sin(k * y))

    def gradient(x, y):
        gx = a0 * rho * k * np.cos(k * x) * np.sin(k * y)
        gy = a0 * rho * k * np.sin(k * x) * np.cos(k * y)
        return np.stack(np.broadcast_arrays(gx, gy), axis=-1)

    return CoefficientField(
        evaluate=evaluate,
        alpha0=a0 * (1.0 - rho),
        alpha1=a0 * (1.0 + rho),
        epsilon=float(eps) if rho > 0 else math.inf,
        gradient=gradient,
        name="periodic",
    )


def make_layered_alpha(P: float, eps: float) -> CoefficientField:
    """
    alpha(x, y) = 1 / (2 + P sin(2 pi x/eps)),  P in [0, 2)

    Oscillates in x only. Bounds 1/(2+P) and 1/(2-P).
    """
    if not 0 <= P < 2:
        raise CoefficientBoundsError(f"P must satisfy 0 <= P < 2, got {P}")
    if not eps > 0:
        raise CoefficientBoundsError(f"eps must be positive, got {eps}")
    k = 2.0 * np.pi / eps

    def evaluate(x, y):
        return 1.0 / (2.0 + P * np.sin(k * x)) + 0.0 * y

    def gradient(x, y):
        gx = -P * k * np.cos(k * x) / (2.0 + P * np.sin(k * x)) ** 2
        return np.stack(np.broadcast_arrays(gx, 0.0 * y), axis=-1)

    return CoefficientField(
        evaluate=evaluate,
        alpha0=1.0 / (2.0 + P),
        alpha1=1.0 / (2.0 - P),
        epsilon=float(eps) if P > 0 else math.inf,
        gradient=gradient,
        name="layered",
    )


def make_constant_alpha(a0: float = 1.0) -> CoefficientField:
    if not a0 > 0:
        raise CoefficientBoundsError(f"a0 must be positive, got {a0}")
    return CoefficientField(
        evaluate=lambda x, y: np.full(np.broadcast(x, y).shape, float(a0)),
        alpha0=float(a0),
        alpha1=float(a0),
        gradient=lambda x, y: np.zeros(np.broadcast(x, y).shape + (2,)),
        name="constant",
    )


# =============================================================================
# NONLINEARITY b(u)
# =============================================================================

@dataclass(frozen=True)
class Nonlinearity:
    """
    The scalar nonlinearity b with derivative, lower bound and Kirchhoff
    antiderivative btilde.

    USAGE:
        b = make_nonlinearity_sin()
        s = b.btilde(1.7)
        t = b.btilde_inv(s)            # 1.7 to ~1e-13
    """
    b: ArrayFunc
    db: ArrayFunc
    b0: float
    btilde: ArrayFunc
    inverse: Optional[ArrayFunc] = None
    name: str = "custom"
    is_constant: bool = False

    def __post_init__(self):
        if not self.b0 > 0:
            raise CoefficientBoundsError(f"b0 must be positive, got {self.b0}")

    def __call__(self, t) -> np.ndarray:
        return self.b(t)

    def btilde_inv(self, s) -> np.ndarray:
        """Inverse Kirchhoff transform, elementwise"""
        if self.inverse is not None:
            return self.inverse(s)
        return invert_monotone(self.btilde, self.b, self.b0, s, guess_slope=float(self.b(0.0)))

    def check_lower_bound(self, values: np.ndarray, arguments: Optional[np.ndarray] = None) -> None:
        values = np.asarray(values)
        bad = values < self.b0 * (1.0 - BOUNDS_SLACK)
        if bad.any():
            k = int(np.flatnonzero(bad.ravel())[0])
            arg = None if arguments is None else float(np.asarray(arguments).ravel()[k])
            raise CoefficientBoundsError(
                f"b({arg}) = {float(values.ravel()[k]):.6g} is below b0={self.b0}",
                point=arg,
                value=float(values.ravel()[k]),
            )


def invert_monotone(
    func: ArrayFunc,
    deriv: ArrayFunc,
    lower_slope: float,
    targets,
    guess_slope: float = 1.0,
    tol: float = INVERSE_TOL,
    maxiter: int = INVERSE_MAX_ITER,
) -> np.ndarray:
    """
    Solve func(t) = s for a strictly increasing func with func(0) = 0 and
    func' >= lower_slope > 0.

    Vectorised Newton first; any entry that fails is redone by Brent's
    method on the bracket |t| <= |s|/lower_slope + 1.

    Raises:
        InversionError: when both methods fail for some target
    """
    s = np.asarray(targets, dtype=float)
    flat = np.atleast_1d(s).ravel()
    out = np.zeros_like(flat)
    nonzero = flat != 0.0
    if not nonzero.any():
        return out.reshape(s.shape)

    rhs = flat[nonzero]
    x0 = rhs / guess_slope
    if rhs.size > 1:
        res = optimize.newton(
            lambda t: func(t) - rhs,
            x0,
            fprime=deriv,
            tol=tol,
            maxiter=maxiter,
            full_output=True,
            disp=False,
        )
        roots = np.asarray(res.root, dtype=float).copy()
        converged = np.asarray(res.converged, dtype=bool)
    else:
        # scipy switches to its scalar code path for a single target
        root, info = optimize.newton(
            lambda t: float(func(t)) - float(rhs[0]),
            float(x0[0]),
            fprime=lambda t: float(deriv(t)),
            tol=tol,
            maxiter=maxiter,
            full_output=True,
            disp=False,
        )
        roots = np.array([root], dtype=float)
        converged = np.array([info.converged])
    converged &= np.isfinite(roots)

    for k in np.flatnonzero(~converged):
        target = float(rhs[k])
        width = abs(target) / lower_slope + 1.0
        try:
            roots[k] = optimize.brentq(
                lambda t: float(func(t)) - target, -width, width, xtol=tol, maxiter=maxiter
            )
        except (ValueError, RuntimeError) as e:
            raise InversionError(f"could not invert btilde at s={target:.17g}: {e}") from e

    out[nonzero] = roots
    return out.reshape(s.shape)


def make_nonlinearity_sin() -> Nonlinearity:
    """b(t) = 2 + sin t, b0 = 1, btilde(t) = 2t + 1 - cos t"""
    return Nonlinearity(
        b=lambda t: 2.0 + np.sin(t),
        db=lambda t: np.cos(t),
        b0=1.0,
        btilde=lambda t: 2.0 * np.asarray(t, dtype=float) + 1.0 - np.cos(t),
        name="sin",
    )


def make_nonlinearity_constant(c: float) -> Nonlinearity:
    """b identically c > 0: the problem becomes linear"""
    if not c > 0:
        raise CoefficientBoundsError(f"constant nonlinearity needs c > 0, got {c}")
    c = float(c)
    return Nonlinearity(
        b=lambda t: np.full(np.shape(t), c),
        db=lambda t: np.zeros(np.shape(t)),
        b0=c,
        btilde=lambda t: c * np.asarray(t, dtype=float),
        inverse=lambda s: np.asarray(s, dtype=float) / c,
        name="constant",
        is_constant=True,
    )


def make_nonlinearity(b: ArrayFunc, db: ArrayFunc, b0: float, name: str = "custom") -> Nonlinearity:
    """
    Build a Nonlinearity from b alone.

    btilde is integrated by adaptive Gauss-Kronrod quadrature (absolute
    tolerance 1e-12); the inverse uses the safeguarded Newton solver.
    """

    def _scalar_btilde(t: float) -> float:
        value, _ = integrate.quad(lambda s: float(b(s)), 0.0, float(t), epsabs=1e-12, epsrel=1e-13, limit=200)
        return value

    vectorised = np.vectorize(_scalar_btilde, otypes=[float])
    return Nonlinearity(b=b, db=db, b0=b0, btilde=lambda t: vectorised(t), name=name)
