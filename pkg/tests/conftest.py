import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

CRITERIA = {
    1: "Kalman filter vs dense joint-Gaussian likelihood",
    2: "signal gradient/Hessian vs finite differences",
    3: "Laplace vs Gauss-Hermite quadrature",
    4: "Laplace/PF-IS profile agreement",
    5: "bootstrap PF convergence ordering",
    6: "two-factor Laplace study means",
    7: "renormalized innovations shrink k dispersion",
    8: "stepwise vs joint calibration",
    9: "PF-GPR high-default means",
    10: "PF-GPR low-default means and k bias",
    11: "GPR unit suite",
    12: "long-run average level matching (Monte Carlo)",
}

_results = {}


@pytest.fixture
def criterion():
    """Record ``(number, passed, detail)`` for the acceptance summary."""

    def record(number, passed, detail):
        _results[number] = (bool(passed), detail)
        return passed

    return record


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pytest_terminal_summary(terminalreporter):
    ran = {n for n in _results}
    if not ran and not any("test_acceptance" in str(r.nodeid)
                           for rs in terminalreporter.stats.values() for r in rs
                           if hasattr(r, "nodeid")):
        return
    terminalreporter.section("acceptance criteria")
    for n, title in CRITERIA.items():
        if n in _results:
            ok, detail = _results[n]
            terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:2d}. {title}: {detail}")
        else:
            terminalreporter.write_line(f"[----] {n:2d}. {title}: no result (not run, skipped or errored)")
