"""Acceptance battery: one pass/fail line per criterion, printed even under capture."""

import pytest

from entropykit import validation


@pytest.mark.slow
@pytest.mark.parametrize("name", list(validation.CHECKS))
def test_acceptance(name, capsys):
    result = validation.CHECKS[name]()
    with capsys.disabled():
        print(f"\n[acceptance] {result.line()}")
    assert result.passed, result.detail
