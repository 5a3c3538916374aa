"""
=============================================================================
CONFIG - Flat key = value run configuration
=============================================================================

FILE FORMAT:
    # comment
    problem.alpha = periodic
    problem.eps   = 0.0625
    study.n       = 4, 8, 16

    One key per line, '#' starts a comment, blank lines are ignored.
    Unknown and duplicate keys are errors; list keys are comma separated.

The model is a pydantic BaseModel whose field aliases ARE the flat keys,
so validation messages name the offending key directly. to_flat() prints
every key with its effective value and reads back to the same model.
=============================================================================
"""

import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .errors import ConfigError
from .solvers import CENTROID, PicardConfig

logger = logging.getLogger(__name__)

LIST_KEYS = ("study.schemes", "study.n", "study.eps", "reduced.sample_point")

SchemeName = Literal["galerkin", "rfb_coupled", "rfb_decoupled", "rfb_reduced", "fine_reference", "kirchhoff"]


class RunConfig(BaseModel):
    """Every configurable knob of a solve or a study, with defaults"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    # Problem
    alpha: Literal["periodic", "layered", "constant"] = Field("periodic", alias="problem.alpha")
    a0: float = Field(1.0, alias="problem.alpha.a0", gt=0)
    rho: float = Field(0.9, alias="problem.alpha.rho", ge=0, lt=1)
    p: float = Field(1.5, alias="problem.alpha.p", ge=0, lt=2, description="layered amplitude P")
    eps: float = Field(0.0625, alias="problem.eps", gt=0)
    b: Literal["sin", "constant"] = Field("sin", alias="problem.b")
    b_c: float = Field(2.0, alias="problem.b.c", gt=0)
    f: Literal["manufactured", "one", "zero", "sinsin"] = Field("one", alias="problem.f")
    f_scale: float = Field(1.0, alias="problem.f.scale")

    # Meshes
    n: int = Field(8, alias="mesh.n", ge=1)
    m: int = Field(16, alias="mesh.m", ge=3)
    ref_levels: int = Field(5, alias="mesh.ref_levels", ge=0)

    # Scheme
    scheme: SchemeName = Field("rfb_coupled", alias="scheme")
    reduced_mode: Literal["field", "element_average", "point_sample"] = Field("field", alias="reduced.mode")
    sample_point: Tuple[float, float, float] = Field(CENTROID, alias="reduced.sample_point")

    # Picard and linear solves
    picard_tol: float = Field(1e-8, alias="picard.tol", gt=0)
    picard_max_iter: int = Field(50, alias="picard.max_iter", ge=1)
    warm_start: bool = Field(False, alias="picard.warm_start")
    solver_method: Literal["cg", "direct", "dense"] = Field("cg", alias="solver.method")
    solver_tol: float = Field(1e-10, alias="solver.tol", gt=0)
    solver_max_iter: int = Field(20000, alias="solver.max_iter", ge=1)
    quad_order: int = Field(2, alias="quad.order")

    # Studies
    study_schemes: List[SchemeName] = Field(["galerkin", "rfb_coupled"], alias="study.schemes", min_length=1)
    study_n: List[int] = Field([4, 8], alias="study.n", min_length=1)
    study_eps: List[float] = Field([0.0625], alias="study.eps", min_length=1)

    @field_validator("sample_point", mode="before")
    @classmethod
    def _sample_point(cls, value):
        if isinstance(value, str) and value.strip().lower() == "centroid":
            return CENTROID
        return value

    @field_validator("sample_point")
    @classmethod
    def _interior_point(cls, value):
        if abs(sum(value) - 1.0) > 1e-12 or min(value) <= 0:
            raise ValueError("must be barycentric coordinates of an interior point (positive, sum 1)")
        return value

    @field_validator("quad_order")
    @classmethod
    def _quad_order(cls, value):
        if value not in (1, 2, 4):
            raise ValueError("must be 1, 2 or 4")
        return value

    @field_validator("study_n")
    @classmethod
    def _positive_sizes(cls, value):
        if any(n < 1 for n in value):
            raise ValueError("mesh sizes must be >= 1")
        return value

    @field_validator("study_eps")
    @classmethod
    def _positive_eps(cls, value):
        if any(e <= 0 for e in value):
            raise ValueError("eps values must be positive")
        return value

    # -------------------------------------------------------------------------

    @classmethod
    def from_flat(cls, mapping: Dict[str, Any]) -> "RunConfig":
        """Validate a {flat key: value} mapping"""
        try:
            return cls.model_validate(mapping)
        except ValidationError as e:
            err = e.errors()[0]
            key = str(err["loc"][0]) if err["loc"] else None
            if err["type"] == "extra_forbidden":
                raise ConfigError(f"unknown configuration key {key!r}", key=key) from e
            raise ConfigError(f"{key}: {err['msg']}", key=key) from e

    def to_flat(self) -> str:
        """Effective configuration in the flat file format"""
        lines = ["# effective bubblefem configuration (defaults applied)"]
        for name, info in type(self).model_fields.items():
            lines.append(f"{info.alias} = {_render(getattr(self, name))}")
        return "\n".join(lines) + "\n"

    def picard(self, threads: int = 1) -> PicardConfig:
        return PicardConfig(
            tol=self.picard_tol,
            max_iter=self.picard_max_iter,
            warm_start=self.warm_start,
            linear_solver=self.solver_method,
            linear_tol=self.solver_tol,
            linear_max_iter=self.solver_max_iter,
            quad_order=self.quad_order,
            threads=threads,
        )


def _render(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ", ".join(_render(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_flat(text: str, source: str = "<config>") -> Dict[str, Union[str, List[str]]]:
    """
    Parse the flat format into {key: raw value}.

    Raises:
        ConfigError: malformed line, empty value or duplicate key
    """
    values: Dict[str, Union[str, List[str]]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: missing key")
        if not value:
            raise ConfigError(f"{source}:{lineno}: empty value for {key!r}", key=key)
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}", key=key)
        if key in LIST_KEYS and "," in value:
            values[key] = [item.strip() for item in value.split(",") if item.strip()]
        elif key in LIST_KEYS and key != "reduced.sample_point":
            values[key] = [value]
        else:
            values[key] = value
    return values


def loads_config(text: str, source: str = "<config>") -> RunConfig:
    return RunConfig.from_flat(parse_flat(text, source))


def load_config(path: Union[str, Path]) -> RunConfig:
    """
    Read and validate a config file.

    Raises:
        ConfigError: missing file or invalid content
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    config = loads_config(path.read_text(encoding="utf-8"), source=str(path))
    logger.debug("loaded %s: scheme=%s n=%d m=%d", path, config.scheme, config.n, config.m)
    return config


