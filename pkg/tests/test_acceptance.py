"""Acceptance gate: one test per criterion, sharing a single full run.

The fixture executes the whole suite once (several minutes: a full seed-42
pipeline with depth cross-validation plus two repeat runs for the
determinism check); each test then asserts one criterion so the pytest
output shows one pass/fail line per criterion.
"""

import pytest

from qplan.acceptance import format_result, run_acceptance


@pytest.fixture(scope="module")
def results(tmp_path_factory):
    out_dir = str(tmp_path_factory.mktemp("acceptance"))
    found = {r.number: r for r in run_acceptance(out_dir)}
    for number in sorted(found):
        print(format_result(found[number]))
    return found


def _check(results, number):
    result = results[number]
    assert result.passed, format_result(result)


def test_criterion_1_rewrite_semantics(results):
    _check(results, 1)


def test_criterion_2_search_vs_exhaustive(results):
    _check(results, 2)


def test_criterion_3_latency_ladder(results):
    _check(results, 3)


def test_criterion_4_constraint_satisfaction_gap(results):
    _check(results, 4)


def test_criterion_5_cost_model_accuracy(results):
    _check(results, 5)


def test_criterion_6_student_agreement(results):
    _check(results, 6)


def test_criterion_7_student_speedup(results):
    _check(results, 7)


def test_criterion_8_numerical_checks(results):
    _check(results, 8)


def test_criterion_9_repeat_run_determinism(results):
    _check(results, 9)
