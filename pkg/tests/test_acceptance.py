"""Acceptance criteria A1 to A11, one test each, at the frozen constants.

Every test prints its PASS/FAIL line (measured values, thresholds, seeds and
runtime) so the report is visible in ``pytest -v`` output.
"""

import pytest

from lossless_hedge.acceptance import CHECKS, SUITES, run_suite


@pytest.mark.slow
@pytest.mark.parametrize("criterion", SUITES["all"])
def test_criterion(criterion, capsys):
    (result,) = run_suite(criterion)
    with capsys.disabled():
        print("\n" + result.line())
    assert result.id == criterion
    assert result.passed, result.line()


def test_every_criterion_has_one_check():
    assert list(CHECKS) == [f"A{i}" for i in range(1, 12)]
    assert SUITES["core"] == ["A1", "A2", "A3", "A4", "A5"]
