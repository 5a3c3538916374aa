"""
=============================================================================
BUBBLEFEM - CONFIGURATION AND PROBLEM CATALOGUE TEST SUITE
=============================================================================
"""

import math

import numpy as np
import pytest

from bubblefem.config import RunConfig, load_config, loads_config, parse_flat
from bubblefem.errors import ConfigError
from bubblefem.problems import build_problem
from bubblefem.solvers import CENTROID


# =============================================================================
# TEST DATA
# =============================================================================

SAMPLE = """
# oscillatory benchmark
problem.alpha = periodic
problem.eps   = 0.125     # one period per coarse element at n = 8
mesh.n        = 8
mesh.m        = 12
scheme        = rfb_reduced
reduced.mode  = point_sample
study.n       = 4, 8, 16
study.eps     = 0.25
picard.warm_start = true
"""


# =============================================================================
# PARSING
# =============================================================================

def test_defaults():
    cfg = loads_config("")
    assert cfg.scheme == "rfb_coupled"
    assert cfg.n == 8 and cfg.m == 16
    assert cfg.eps == 0.0625
    assert cfg.sample_point == CENTROID
    assert cfg.study_schemes == ["galerkin", "rfb_coupled"]


def test_sample_file_is_parsed():
    cfg = loads_config(SAMPLE)
    assert cfg.eps == 0.125
    assert cfg.m == 12
    assert cfg.scheme == "rfb_reduced"
    assert cfg.reduced_mode == "point_sample"
    assert cfg.study_n == [4, 8, 16]
    assert cfg.study_eps == [0.25]
    assert cfg.warm_start is True


def test_effective_config_reads_back():
    cfg = loads_config(SAMPLE)
    text = cfg.to_flat()
    assert "mesh.m = 12" in text
    assert "study.n = 4, 8, 16" in text
    assert loads_config(text) == cfg


def test_centroid_keyword():
    cfg = loads_config("reduced.sample_point = centroid")
    assert cfg.sample_point == CENTROID
    cfg = loads_config("reduced.sample_point = 0.5, 0.25, 0.25")
    assert cfg.sample_point == (0.5, 0.25, 0.25)


@pytest.mark.parametrize(
    "text, key",
    [
        ("mesh.size = 4", "mesh.size"),
        ("mesh.m = 2", "mesh.m"),
        ("problem.alpha.rho = 1.0", "problem.alpha.rho"),
        ("quad.order = 3", "quad.order"),
        ("reduced.sample_point = 1.0, 0.0, 0.0", "reduced.sample_point"),
        ("study.n = 4, 0", "study.n"),
        ("study.schemes = galerkin, magic", "study.schemes"),
        ("solver.method = gmres", "solver.method"),
    ],
)
def test_invalid_values_name_their_key(text, key):
    with pytest.raises(ConfigError) as info:
        loads_config(text)
    assert info.value.key == key


def test_unknown_key_message():
    with pytest.raises(ConfigError, match="unknown configuration key"):
        loads_config("mesh.size = 4")


@pytest.mark.parametrize("text", ["n = 3", "alpha = layered", "picard_tol = 1e-3"])
def test_field_names_are_not_keys(text):
    with pytest.raises(ConfigError, match="unknown configuration key") as info:
        loads_config(text)
    assert info.value.key == text.split(" = ")[0]


@pytest.mark.parametrize(
    "text, message",
    [
        ("mesh.n 4", "expected 'key = value'"),
        ("mesh.n =", "empty value"),
        ("= 4", "missing key"),
        ("mesh.n = 4\nmesh.n = 8", "duplicate key"),
    ],
)
def test_malformed_files(text, message):
    with pytest.raises(ConfigError, match=message):
        parse_flat(text, source="run.cfg")


def test_comments_and_blank_lines_are_ignored():
    assert parse_flat("\n# only a comment\n   \nmesh.n = 4 # trailing\n") == {"mesh.n": "4"}


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "absent.cfg")


def test_load_from_disk(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(SAMPLE, encoding="utf-8")
    assert load_config(path) == loads_config(SAMPLE)


def test_picard_settings():
    cfg = loads_config("picard.tol = 1e-6\npicard.max_iter = 7\nsolver.method = direct\nquad.order = 4")
    picard = cfg.picard(threads=3)
    assert picard.tol == 1e-6
    assert picard.max_iter == 7
    assert picard.linear_solver == "direct"
    assert picard.quad_order == 4
    assert picard.threads == 3


def test_model_is_frozen():
    cfg = RunConfig()
    with pytest.raises(Exception):
        cfg.n = 4


# =============================================================================
# PROBLEM CATALOGUE
# =============================================================================

def test_constant_load_problem():
    problem = build_problem(loads_config("problem.f.scale = 3"))
    assert problem.f == 3.0
    assert problem.exact is None
    assert problem.alpha.epsilon == 0.0625
    assert "sin" in problem.label


def test_eps_override_for_studies():
    problem = build_problem(loads_config(""), eps=0.25)
    assert problem.alpha.epsilon == 0.25


def test_layered_and_constant_fields():
    layered = build_problem(loads_config("problem.alpha = layered\nproblem.alpha.p = 1.0"))
    assert layered.alpha.alpha0 > 0
    constant = build_problem(loads_config("problem.alpha = constant\nproblem.alpha.a0 = 2.5\nproblem.b = constant"))
    assert constant.alpha(np.array([0.3]), np.array([0.7]))[0] == pytest.approx(2.5)
    assert math.isinf(constant.alpha.epsilon)
    assert constant.b.is_constant


def test_manufactured_problem_carries_its_solution():
    problem = build_problem(loads_config("problem.f = manufactured\nproblem.eps = 0.5"))
    assert problem.exact is not None
    x, y = np.array([0.5]), np.array([0.5])
    assert problem.exact.u(x, y)[0] == pytest.approx(1.0)
    assert np.isfinite(problem.f(x, y)).all()


def test_zero_and_sinsin_loads():
    zero = build_problem(loads_config("problem.f = zero"))
    assert zero.f == 0.0
    sinsin = build_problem(loads_config("problem.f = sinsin"))
    assert sinsin.f(np.array([0.5]), np.array([0.5]))[0] == pytest.approx(2 * np.pi ** 2)
