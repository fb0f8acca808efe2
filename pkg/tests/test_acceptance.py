"""One pass/fail line per acceptance criterion (run with ``-s`` to see them)."""

import pytest

from flowlps.harness import acceptance


def report(res):
    print("\n" + res.line())
    assert res.passed, res.line()


def test_criterion_1_proximal_solvers_match_ridge():
    report(acceptance.criterion_1())


@pytest.mark.slow
def test_criterion_2_pcn_step_targets_posterior_marginal():
    report(acceptance.criterion_2())


@pytest.mark.slow
def test_criterion_3_ula_stationary_covariance():
    report(acceptance.criterion_3())


def test_criterion_4_pcn_invariance_and_acceptance():
    report(acceptance.criterion_4())


def test_criterion_5_velocity_vs_quadrature():
    report(acceptance.criterion_5())


def test_criterion_6_collapse_to_euler():
    report(acceptance.criterion_6())


def test_criterion_7_published_parameters():
    report(acceptance.criterion_7())


@pytest.mark.slow
def test_criterion_8_ablation_trends():
    report(acceptance.criterion_8())


@pytest.mark.slow
def test_criterion_9_cli_determinism():
    report(acceptance.criterion_9())
