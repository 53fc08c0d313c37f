"""Full-scale acceptance criteria, one test per criterion, at the stated tolerances.

Each run prints a PASS/FAIL line, collected again in the terminal summary.
"""

import pytest

from rasp_evt import acceptance

from .conftest import ACCEPTANCE_LINES


@pytest.mark.parametrize("number", sorted(acceptance.CRITERIA))
def test_criterion(number):
    res = acceptance.CRITERIA[number](seed=0, quick=False, workers=1)
    line = res.line()
    print(line)
    ACCEPTANCE_LINES.append(line)
    detail = "; ".join(f"{c.label} {c.detail}" for c in res.failures())
    assert res.passed, f"criterion {number} ({res.name}) failed: {detail}"
