import numpy as np
import pytest

from hrcl.domain import Plan, PlanSet


def make_planset(agent_id, rows, costs=None, I=1):
    from hrcl.domain import equal_groups
    rows = [np.atleast_1d(np.asarray(r, dtype=float)) for r in rows]
    costs = costs if costs is not None else [k / max(len(rows) - 1, 1) for k in range(len(rows))]
    return PlanSet(agent_id, tuple(Plan(r, c) for r, c in zip(rows, costs)), equal_groups(len(rows), I))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
