import sys
from dataclasses import replace
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from pacontract.hjb_solver import Grid, auto_grid, min_steps, solve  # noqa: E402
from pacontract.loadcontrol import LoadControlParams, build_model  # noqa: E402
from pacontract.model import model_from_config  # noqa: E402

ORACLE_MODEL = {
    "revenue_vol": 1.0,
    "system_rhs": {"const": 0.0, "y_coef": -1.0, "a_coef": 1.0},
    "principal_running_reward": {"state": {"kind": "quadratic", "c2": -0.5}, "p_coef": -1.0},
    "principal_terminal_reward": {"kind": "linear", "slope": 1.0},
    "agent_pay_utility": {"kind": "linear", "slope": 1.0},
    "effort_cost": {"kind": "linear", "slope": 0.5},
    "end_pay_utility": {"kind": "cara", "rho": 0.5},
    "controls": [0.0, 1.0],
    "payments": [0.0, 0.5],
    "horizon": 1.0,
    "participation": 0.0,
    "y0": 0.0,
}
ORACLE_GRID = Grid(-1.5, 1.5, 21, -0.25, 1.0, 21, 50, 1.0)


@pytest.fixture
def trivial_spec():
    return model_from_config({"participation": 0.5, "horizon": 1.0, "payments": [0.0], "agent_pay_utility": {"kind": "zero"}})


@pytest.fixture
def trivial_grid():
    return Grid(-1.0, 2.0, 7, -1.0, 1.0, 5, 10, 1.0)


@pytest.fixture
def oracle_spec():
    return model_from_config(ORACLE_MODEL)


@pytest.fixture
def oracle_wide_grid(oracle_spec):
    """Oracle instance on a w range wide enough for Monte Carlo paths (g^{-1} needs w < 2)."""
    grid = Grid(-3.0, 1.95, 34, -0.5, 1.25, 15, 1, 1.0)
    return replace(grid, n_t=min_steps(oracle_spec, grid))


@pytest.fixture(scope="session")
def load_spec():
    return build_model(LoadControlParams())


@pytest.fixture(scope="session")
def load_grid(load_spec):
    return auto_grid(load_spec, n_w=21, n_y=81, deviation_envelope=True)


@pytest.fixture(scope="session")
def load_field(load_spec, load_grid):
    return solve(load_spec, load_grid)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
