"""Acceptance criteria 1-13 at their stated tolerances.

Run with ``pytest tests/test_acceptance.py -s`` to see one line per criterion.
"""

import pytest

from cgprocess import acceptance as A


@pytest.fixture(scope="module")
def results():
    return {r.id: r for r in A.run_suite("full", seed=1, threads=1)}


def test_report_lines(results, capsys):
    with capsys.disabled():
        print()
        for r in results.values():
            print(A.format_line(r))
    assert sorted(results) == list(range(1, 14))


@pytest.mark.parametrize("cid", range(1, 14))
def test_criterion(results, cid):
    r = results[cid]
    assert r.error is None, r.error
    if r.gated:
        assert r.passed, f"criterion {cid} ({r.name}) measured {r.measured}"
