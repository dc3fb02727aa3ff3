"""Shared fixtures and the acceptance summary printed at the end of a run."""

from __future__ import annotations

import numpy as np
import pytest

from schrodinger_ula.forward import ForwardModel, LinkFunction
from schrodinger_ula.likelihood import generate_dataset
from schrodinger_ula.pde import BoundaryData, Grid
from schrodinger_ula.spectral import Basis

#: acceptance id -> one summary line, filled by tests/test_acceptance.py
AC_LINES: dict[str, str] = {}


def record_ac(ac_id: str, passed: bool, detail: str) -> str:
    line = f"{ac_id:<6} {'PASS' if passed else 'FAIL'}  {detail}"
    AC_LINES[ac_id] = line
    print(line)
    return line


@pytest.fixture
def ac():
    """Record one acceptance line and fail the test when it is red."""

    def report(ac_id, passed, detail):
        line = record_ac(ac_id, bool(passed), detail)
        assert passed, line

    return report


def pytest_terminal_summary(terminalreporter):
    if not AC_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(AC_LINES, key=lambda s: int(s.split("-")[1])):
        terminalreporter.write_line(AC_LINES[key])


def make_model(D=4, n_interior=127, g=1.0, K_min=0.0, dim=1):
    return ForwardModel(Basis(Grid(dim, n_interior), D), LinkFunction(K_min),
                        BoundaryData.constant(g))


@pytest.fixture
def small_model():
    return make_model()


@pytest.fixture
def small_data(small_model):
    theta0 = np.array([0.8, -0.4, 0.2, -0.1])
    return generate_dataset(small_model, theta0, 60, seed=4)
