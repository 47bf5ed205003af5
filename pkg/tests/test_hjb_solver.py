import time
from dataclasses import replace

import numpy as np
import pytest

from conftest import ORACLE_GRID
from oracles import mca_value
from pacontract.errors import CflViolation, GridError, OutOfBounds
from pacontract.hjb_solver import (Grid, auto_grid, bilinear, convergence_report, derivatives, dyadic_grids,
                                   initial_value, min_steps, policy_at, solve, successive_gaps)
from pacontract.model import model_from_config, theta_table


def linear_terminal_spec(const=0.0):
    return model_from_config({
        "revenue_drift": {"a_coef": 0.0},
        "principal_terminal_reward": {"kind": "linear", "slope": 1.0},
        "system_rhs": {"const": const},
        "horizon": 1.0,
    })


class TestClosedForms:
    def test_zero_model_is_minus_w(self, trivial_spec, trivial_grid):
        field = solve(trivial_spec, trivial_grid)
        w = trivial_grid.w[:, None, None]
        assert np.max(np.abs(field.phi + w)) <= 1e-12
        assert field.value_at(trivial_spec.participation_payoff, 0.0) == pytest.approx(-0.5, abs=1e-12)

    @pytest.mark.parametrize("const", [0.0, 0.7, -0.4])
    def test_linear_terminal_reward_is_transported(self, const):
        spec = linear_terminal_spec(const)
        grid = Grid(-1.0, 1.0, 9, -1.0, 1.0, 9, 20, 1.0)
        field = solve(spec, grid)
        w, y = np.meshgrid(grid.w, grid.y, indexing="ij")
        for n, t in enumerate(grid.times):
            exact = y + const * (grid.horizon - t) - w
            assert np.max(np.abs(field.phi[:, :, n] - exact)) <= 1e-12

    def test_terminal_slice_is_exact(self, oracle_spec):
        field = solve(oracle_spec, ORACLE_GRID)
        w, y = np.meshgrid(ORACLE_GRID.w, ORACLE_GRID.y, indexing="ij")
        exact = -oracle_spec.end_pay_inverse(w) + oracle_spec.principal_terminal_reward(y)
        assert np.array_equal(field.phi[:, :, -1], exact)


class TestOracle:
    def test_matches_markov_chain_approximation(self, oracle_spec):
        thetas = theta_table(oracle_spec)
        assert thetas == {0.0: 0.0, 1.0: 0.5}
        t0 = time.perf_counter()
        fd = initial_value(oracle_spec, ORACLE_GRID, thetas)
        mca = mca_value(oracle_spec, ORACLE_GRID.w, ORACLE_GRID.y, ORACLE_GRID.n_t, thetas)
        assert time.perf_counter() - t0 < 10.0
        assert abs(fd - mca) <= 0.02 * abs(mca)
        # frozen from the chain run: 0.98880310
        assert mca == pytest.approx(0.98880310, rel=1e-6)


class TestSchemeProperties:
    def test_monotone_in_w(self, oracle_spec, load_field):
        for field in (solve(oracle_spec, ORACLE_GRID), load_field):
            assert np.all(np.diff(field.phi, axis=0) <= 0.0)

    def test_comparison(self):
        base = {"revenue_vol": 1.0, "system_rhs": {"y_coef": -1.0, "a_coef": 1.0}, "controls": [0.0, 1.0],
                "payments": [0.0, 0.5], "effort_cost": {"kind": "linear", "slope": 0.5},
                "end_pay_utility": {"kind": "cara", "rho": 0.5}}
        hi = model_from_config({**base, "principal_running_reward": {"state": {"kind": "quadratic", "c2": -0.5}}})
        lo = model_from_config({**base, "principal_running_reward": {"state": {"kind": "quadratic", "c0": -0.1, "c2": -0.8}}})
        y = ORACLE_GRID.y
        assert np.all(-0.5 * y ** 2 >= -0.1 - 0.8 * y ** 2)
        assert np.all(solve(hi, ORACLE_GRID).phi >= solve(lo, ORACLE_GRID).phi)

    @pytest.mark.parametrize("c", [1.0, -3.25, 40.0])
    def test_constant_shift(self, c):
        base = {"revenue_vol": 1.0, "system_rhs": {"y_coef": -1.0, "a_coef": 1.0}, "controls": [0.0, 1.0],
                "payments": [0.0, 0.5], "effort_cost": {"kind": "linear", "slope": 0.5},
                "end_pay_utility": {"kind": "cara", "rho": 0.5}}
        s1 = model_from_config({**base, "principal_running_reward": {"state": {"kind": "quadratic", "c2": -0.5}}})
        s2 = model_from_config({**base, "principal_running_reward": {"state": {"kind": "quadratic", "c2": -0.5, "c0": c}}})
        f1, f2 = solve(s1, ORACLE_GRID), solve(s2, ORACLE_GRID)
        shift = c * (ORACLE_GRID.horizon - ORACLE_GRID.times)
        err = np.abs(f2.phi - f1.phi - shift[None, None, :])
        assert err.max() <= 1e-12 * (1 + np.abs(f1.phi).max() + abs(c))
        assert np.array_equal(f1.u_index, f2.u_index)
        assert np.array_equal(f1.p_index, f2.p_index)


class TestGrid:
    def test_cfl_violation_raises_before_solving(self, oracle_spec):
        with pytest.raises(CflViolation, match="n_t >="):
            solve(oracle_spec, replace(ORACLE_GRID, n_t=2))

    def test_min_steps_passes_cfl(self, oracle_spec):
        n = min_steps(oracle_spec, ORACLE_GRID)
        solve(oracle_spec, replace(ORACLE_GRID, n_t=n))
        assert n <= ORACLE_GRID.n_t

    def test_b_must_be_inside(self, oracle_spec):
        with pytest.raises(GridError):
            solve(oracle_spec, replace(ORACLE_GRID, w_min=0.5))

    def test_y_envelope_must_be_covered(self):
        spec = linear_terminal_spec(1.0)
        with pytest.raises(GridError):
            solve(spec, Grid(-1.0, 1.0, 9, -0.5, 0.5, 9, 20, 1.0))

    def test_auto_grid_centres_b(self, load_spec, load_grid):
        b = load_spec.participation_payoff
        assert load_grid.w[(load_grid.n_w - 1) // 2] == pytest.approx(b)
        assert load_grid.y_min < 18.0 and load_grid.y_max > 22.5

    def test_dyadic_grids_halve_steps(self, oracle_spec):
        grids = dyadic_grids(oracle_spec, ORACLE_GRID, 2)
        assert [g.n_w for g in grids] == [21, 41, 81]
        assert all(b.n_t >= 2 * a.n_t for a, b in zip(grids, grids[1:]))

    def test_convergence_report_trivial(self, trivial_spec, trivial_grid):
        report = convergence_report(trivial_spec, dyadic_grids(trivial_spec, trivial_grid, 2))
        assert [v for _, v in report] == pytest.approx([-0.5] * 3, abs=1e-12)
        assert max(successive_gaps(report)) <= 1e-12


class TestPolicy:
    def test_nodes_reproduce_stored_policy(self, oracle_spec):
        field = solve(oracle_spec, ORACLE_GRID)
        g = field.grid
        for n in (0, 17, g.n_t - 1):
            t = g.times[n]
            for i in (0, 5, 10, 20):
                for j in (0, 7, 20):
                    u, p = policy_at(field, oracle_spec, g.w[i], g.y[j], t)
                    assert u == field.policy_u[i, j, n]
                    assert p == field.policy_pi[i, j, n]

    def test_vectorized_query(self, oracle_spec):
        field = solve(oracle_spec, ORACLE_GRID)
        w = np.array([-1.2, 0.0, 0.33])
        y = np.array([0.0, 0.5, 0.9])
        u, p = policy_at(field, oracle_spec, w, y, 0.3)
        assert u.shape == (3,) and p.shape == (3,)
        assert [policy_at(field, oracle_spec, w[k], y[k], 0.3) for k in range(3)] == list(zip(u, p))

    def test_out_of_bounds(self, oracle_spec):
        field = solve(oracle_spec, ORACLE_GRID)
        with pytest.raises(OutOfBounds):
            policy_at(field, oracle_spec, 5.0, 0.0, 0.0)
        with pytest.raises(OutOfBounds):
            policy_at(field, oracle_spec, 0.0, 0.0, 1.5)

    def test_load_control_starts_cooling(self, load_spec, load_field):
        u, p = policy_at(load_field, load_spec, load_spec.participation_payoff, load_spec.y0, 0.0)
        assert u == 2.0
        assert p == 0.0


def test_derivatives_exact_on_quadratic():
    w = np.linspace(0, 1, 6)[:, None]
    y = np.linspace(0, 2, 5)[None, :]
    phi = 3 * w ** 2 + 2 * y
    dwb, dwf, dyb, dyf, dww = derivatives(phi, 0.2, 0.5)
    assert np.allclose(dww[1:-1], 6.0) and np.all(dww[[0, -1]] == 0)
    assert np.allclose(dyb, 2.0) and np.allclose(dyf, 2.0)
    assert np.allclose(dwf[:-1], 3 * (2 * w[:-1] + 0.2))


def test_bilinear_exact_on_bilinear_function(oracle_spec):
    g = ORACLE_GRID
    arr = 2.0 + g.w[:, None] - 3.0 * g.y[None, :] + 0.5 * g.w[:, None] * g.y[None, :]
    w, y = 0.123, 0.456
    assert bilinear(arr, g, w, y) == pytest.approx(2.0 + w - 3 * y + 0.5 * w * y, abs=1e-12)
