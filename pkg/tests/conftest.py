import time

import numpy as np
import pytest

from approxinv.forms import Eigenproblem, SymmetricForm
from approxinv.problems import diagonal_problem

SUITE_BUDGET_S = 60.0
ACCEPTANCE_LINES = []
_start = {}


def pytest_sessionstart(session):
    _start["t"] = time.perf_counter()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    elapsed = time.perf_counter() - _start.get("t", time.perf_counter())
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
        ok = elapsed < SUITE_BUDGET_S
        terminalreporter.write_line(
            f"[{'PASS' if ok else 'FAIL'}] 10  full suite runtime {elapsed:.1f} s (< {SUITE_BUDGET_S:.0f} s)"
        )


def pytest_sessionfinish(session, exitstatus):
    elapsed = time.perf_counter() - _start.get("t", time.perf_counter())
    if ACCEPTANCE_LINES and elapsed >= SUITE_BUDGET_S and exitstatus == 0:
        session.exitstatus = 1


def random_spd(n, rng, shift=1.0):
    X = rng.standard_normal((n, n))
    return X @ X.T + shift * n * np.eye(n)


def random_problem(n, seed):
    rng = np.random.default_rng(seed)
    return Eigenproblem(SymmetricForm(random_spd(n, rng)), SymmetricForm(random_spd(n, rng)))


@pytest.fixture
def diag12():
    return diagonal_problem([1.0, 2.0])


@pytest.fixture(scope="session")
def diag10():
    return diagonal_problem(np.arange(1.0, 11.0))
