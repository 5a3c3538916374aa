"""
Exception hierarchy for bubblefem.

Everything raised on purpose by the package derives from BubbleFEMError,
so callers (the CLI, the study driver) can catch one type.
"""

from typing import Any, Optional


class BubbleFEMError(Exception):
    """Base class for all bubblefem failures"""


class MeshError(BubbleFEMError, ValueError):
    """Invalid, degenerate or non-nested mesh, or an empty bubble space"""


class ConfigError(BubbleFEMError, ValueError):
    """Bad configuration value; `key` names the offending entry"""

    def __init__(self, message: str, key: Optional[str] = None):
        super().__init__(message)
        self.key = key


class CoefficientBoundsError(BubbleFEMError, ValueError):
    """A coefficient left its admissible range at a specific point"""

    def __init__(self, message: str, point: Any = None, value: float = float("nan")):
        super().__init__(message)
        self.point = point
        self.value = value


class InversionError(BubbleFEMError):
    """The inverse Kirchhoff transform failed to converge"""


class LinearSolverError(BubbleFEMError):
    """Iterative solve stopped before reaching its tolerance"""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class LocalSolveError(BubbleFEMError):
    """A bubble (element-local) problem could not be solved"""

    def __init__(self, message: str, element: int):
        super().__init__(message)
        self.element = element


class SnapshotMismatchError(BubbleFEMError):
    """Lifts and operator were frozen at different coefficient snapshots"""


class ConvergenceError(BubbleFEMError):
    """Raised by callers that insist on a converged Picard run"""

    def __init__(self, message: str, report: Any = None):
        super().__init__(message)
        self.report = report
