"""
=============================================================================
BUBBLEFEM - ACCEPTANCE SUITE TESTS
=============================================================================
"""

import pytest

from bubblefem.acceptance import CHECKS, _eventually_monotone, run_acceptance


def test_checks_are_registered_in_order():
    assert [name for name, _ in CHECKS] == [
        "kirchhoff", "collapse", "condense", "rates", "contraction",
        "residual", "multiscale", "agreement", "energy",
    ]


@pytest.mark.parametrize(
    "ratios, expected",
    [
        ([], True),
        ([0.5], True),
        ([0.9, 0.6, 0.5, 0.5], True),
        ([0.3, 0.32, 0.31], False),
        ([0.30, 0.3002, 0.3001], True),
        ([0.2, 0.4, 0.6], False),
    ],
)
def test_eventually_monotone(ratios, expected):
    assert _eventually_monotone(ratios) is expected


def test_fast_checks_pass():
    results = run_acceptance(quick=True, only=["collapse", "condense"])
    assert [r.name for r in results] == ["collapse", "condense"]
    for result in results:
        assert result.passed, result.detail
        assert result.seconds >= 0


def test_energy_check_covers_the_runs_before_it():
    results = run_acceptance(quick=True, only=["residual", "energy"])
    assert all(r.passed for r in results), [r.detail for r in results]
    assert "fixed-point residual" in results[0].detail
    assert results[-1].detail.startswith("1 converged")


def test_energy_check_with_no_runs_fails():
    (result,) = run_acceptance(quick=True, only=["energy"])
    assert not result.passed


@pytest.mark.slow
def test_quick_suite_passes():
    results = run_acceptance(quick=True)
    assert len(results) == len(CHECKS)
    failed = {r.name: r.detail for r in results if not r.passed}
    assert not failed


@pytest.mark.slow
def test_agreement_check_sees_the_reduced_gap_shrink():
    (result,) = run_acceptance(quick=True, only=["agreement"])
    assert result.passed, result.detail
    assert "n=2:" in result.detail and "n=4:" in result.detail
