"""Acceptance suite: every pinned criterion at its stated tolerance.

Each test prints its own pass/fail line; the same runners back the
``all-acceptance`` CLI subcommand.
"""

import pytest

from dirac_localize.acceptance import CRITERIA, RUNNERS

BUDGETS = {
    "clifford-ladder": 1.0,
    "oscillator-spectrum": 30.0,
    "weitzenbock-refinement": 60.0,
    "s1-witten": 10.0,
    "t2-morse": 300.0,
    "t2-morse-bott": 300.0,
    "concentration-decay": 600.0,
    "splice-decay": 600.0,
    "gap-lemma": 5.0,
    "solver-oracle": 60.0,
}


@pytest.mark.parametrize("name", CRITERIA)
def test_criterion(name):
    result = RUNNERS[name]()
    print(result.line())
    assert result.runtime < BUDGETS[name], f"{name} exceeded its runtime budget"
    assert result.passed, f"{name} failed: {result.details}"
