import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import brute_force_theta
from pacontract.errors import InvalidModel, NoIncentivizingSensitivity
from pacontract.loadcontrol import LoadControlParams, Series, build_model
from pacontract.model import (Cara, Linear, ModelSpec, Quadratic, check_model, enumerate_candidates, hamiltonian,
                              model_from_config, theta, theta_table)


def make(controls, cost, **kw):
    cfg = {"controls": list(controls), "effort_cost": cost}
    cfg.update(kw)
    return model_from_config(cfg)


LINEAR_COST = {"kind": "linear", "slope": 200.0}
HALF_SQUARE = {"kind": "quadratic", "c2": 0.5}
FINE = [0.0, 0.25, 0.5, 0.75, 1.0]


class TestTheta:
    def test_zero_control_needs_no_sensitivity(self):
        assert theta(0.0, make([0, 2], LINEAR_COST)) == 0.0

    def test_on_control_matches_brute_force_scan(self):
        spec = make([0, 2], LINEAR_COST)
        tol = 1e-3
        expected = brute_force_theta([0.0, 2.0], lambda a: 200.0 * a, 2.0, 400.0, tol)
        assert expected == pytest.approx(200.0, abs=tol)
        assert theta(2.0, spec, z_max=400.0, z_tol=tol) == pytest.approx(expected, abs=tol)

    def test_quadratic_cost_finite_set(self):
        spec = make(FINE, HALF_SQUARE)
        tol = 1e-4
        expected = brute_force_theta(FINE, lambda a: 0.5 * a * a, 0.5, 2.0, tol)
        assert expected == pytest.approx(0.375, abs=tol)
        assert theta(0.5, spec, z_max=2.0, z_tol=tol) == pytest.approx(0.375, abs=tol)

    def test_refinement_approaches_marginal_cost(self):
        # finite-set theta(0.5) -> h'(0.5) = 0.5 as the control grid refines
        errs = []
        for n in (5, 9, 17, 33):
            spec = make(np.linspace(0, 1, n), HALF_SQUARE)
            errs.append(abs(theta(0.5, spec) - 0.5))
        assert errs == sorted(errs, reverse=True)
        assert errs[-1] < 0.02

    def test_dominated_control_is_rejected(self):
        # a=1 costs more than the chord between 0 and 2
        spec = make([0, 1, 2], {"kind": "quadratic", "c1": 0.0, "c2": -1.0, "c0": 0.0})
        with pytest.raises(InvalidModel):
            check_model(spec, 0, 1)
        spec = ModelSpec(
            revenue_drift=lambda t, a: a, revenue_vol=1.0, system_rhs=lambda t, y, a: 0 * y,
            principal_running_reward=lambda y, p: 0 * y, principal_terminal_reward=lambda y: 0 * y,
            agent_pay_utility=lambda p: p, effort_cost=lambda a: np.where(np.asarray(a) == 1, 5.0, 2.0 * np.asarray(a)),
            end_pay_utility=lambda c: c, end_pay_inverse=lambda w: w, control_set=(0, 1, 2), payment_set=(0,),
            horizon=1.0, participation_payoff=0.0, y0=0.0)
        with pytest.raises(NoIncentivizingSensitivity):
            theta(1.0, spec)
        assert theta_table(spec)[1.0] is None

    def test_rejects_unknown_control(self):
        with pytest.raises(ValueError):
            theta(1.0, make([0, 2], LINEAR_COST))

    def test_min_control_is_free_when_cost_minimal_there(self):
        spec = make(FINE, HALF_SQUARE)
        assert theta(0.0, spec) == 0.0

    @settings(max_examples=60, deadline=None)
    @given(
        st.lists(st.floats(0.0, 10.0, allow_nan=False), min_size=2, max_size=6, unique=True),
        st.floats(0.01, 3.0), st.floats(0.0, 2.0),
    )
    def test_monotone_for_convex_cost(self, pts, c2, c1):
        controls = sorted(set(round(p, 3) for p in pts))
        if len(controls) < 2:
            return
        spec = make(controls, {"kind": "quadratic", "c1": c1, "c2": c2})
        table = theta_table(spec)
        vals = [table[a] for a in spec.control_set]
        assert all(v is not None and v >= 0 for v in vals)
        assert all(x <= y for x, y in zip(vals, vals[1:]))
        # returned theta puts the control in the argmax exactly
        h = c1 * spec.controls + c2 * spec.controls ** 2
        for k, z in enumerate(vals):
            v = -h + z * spec.controls
            assert v[k] == v.max()


def load_spec_with_price(level):
    flat = Series([0.0, 8.0], [level, level])
    return build_model(LoadControlParams(price_series=flat))


class TestHamiltonian:
    def test_all_zero_model_picks_smallest(self):
        spec = model_from_config({"controls": [0, 1], "payments": [0, 0.5], "agent_pay_utility": {"kind": "zero"},
                                  "revenue_drift": {"a_coef": 0.0}, "principal_running_reward": {"p_coef": 0.0}})
        thetas = theta_table(spec)
        assert hamiltonian(spec, 0.0, 0.0, 0.0, 0.0, 0.0, thetas) == (0.0, 0.0, 0.0)

    def test_payment_cost_prefers_zero_payment(self):
        # r^A(p) = p and dw = 1 make the payment term -p; everything else vanishes
        spec = model_from_config({"controls": [0, 1], "payments": [0, 0.1, 0.2], "revenue_drift": {"a_coef": 0.0},
                                  "principal_running_reward": {"p_coef": 0.0}})
        thetas = theta_table(spec)
        assert hamiltonian(spec, 0.0, 0.0, 1.0, 0.0, 0.0, thetas) == (0.0, 0.0, 0.0)

    def test_load_control_direct_evaluation(self):
        spec = load_spec_with_price(0.1)
        thetas = theta_table(spec)
        value, u, p = hamiltonian(spec, 1.0, 22.5, 0.0, 0.0, 0.0, thetas)
        expected = (0.2 - 0.1) * 1000 * 2 - 10 * (1 + math.exp(5 * (18 - 22.5))) - 0.0
        assert (u, p) == (2.0, 0.0)
        assert value == pytest.approx(expected, rel=1e-12)
        assert value == pytest.approx(190.0, abs=1e-6)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5), st.floats(-2, 2), st.floats(0, 1))
    def test_dominates_every_candidate(self, dw, dy, dww, y, t):
        spec = make(FINE, HALF_SQUARE, payments=[0.0, 0.3, 0.6], revenue_vol=0.7,
                    system_rhs={"const": 0.2, "y_coef": -1.0, "a_coef": -0.5},
                    principal_running_reward={"state": {"kind": "quadratic", "c2": -1.0}})
        thetas = theta_table(spec)
        value, u, p = hamiltonian(spec, t, y, dw, dy, dww, thetas)
        for a in spec.control_set:
            for q in spec.payment_set:
                integrand = (-(q - 0.5 * a * a) * dw + float(spec.system_rhs(t, y, a)) * dy + a
                             + float(spec.principal_running_reward(y, q)) + 0.5 * (thetas[a] * 0.7) ** 2 * dww)
                assert value >= integrand - 1e-9 * (1 + abs(integrand))

    @settings(max_examples=40, deadline=None)
    @given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3), st.floats(-50, 50))
    def test_constant_shift_in_running_reward(self, dw, dy, dww, c):
        base = dict(payments=[0.0, 0.3], revenue_vol=0.5, system_rhs={"y_coef": -1.0, "a_coef": 1.0})
        s1 = make(FINE, HALF_SQUARE, principal_running_reward={"state": {"kind": "quadratic", "c2": -1.0}}, **base)
        s2 = make(FINE, HALF_SQUARE, principal_running_reward={"state": {"kind": "quadratic", "c2": -1.0, "c0": c}}, **base)
        th = theta_table(s1)
        v1, u1, p1 = hamiltonian(s1, 0.0, 0.3, dw, dy, dww, th)
        v2, u2, p2 = hamiltonian(s2, 0.0, 0.3, dw, dy, dww, th)
        assert (u1, p1) == (u2, p2)
        assert v2 - v1 == pytest.approx(c, abs=1e-9 * (1 + abs(c) + abs(v1)))

    def test_upwind_pairs_pick_side_by_drift_sign(self):
        spec = model_from_config({"controls": [0.0], "payments": [0.0],
                                  "system_rhs": {"const": 1.0}, "principal_running_reward": {"p_coef": 0.0}})
        th = theta_table(spec)
        vals, *_ = enumerate_candidates(spec, 0.0, 0.0, (0.0, 0.0), (10.0, 20.0), 0.0, th)
        assert vals[0] == 20.0  # f > 0 uses the forward difference
        spec = model_from_config({"controls": [0.0], "payments": [0.0],
                                  "system_rhs": {"const": -1.0}, "principal_running_reward": {"p_coef": 0.0}})
        vals, *_ = enumerate_candidates(spec, 0.0, 0.0, (0.0, 0.0), (10.0, 20.0), 0.0, th)
        assert vals[0] == -10.0


class TestModelSpec:
    def test_invariants(self):
        with pytest.raises(InvalidModel):
            model_from_config({"horizon": 0.0})
        with pytest.raises(InvalidModel):
            model_from_config({"revenue_vol": -1.0})
        with pytest.raises(InvalidModel):
            model_from_config({"controls": [1, 0]})
        with pytest.raises(InvalidModel):
            model_from_config({"payments": []})

    def test_unknown_family(self):
        with pytest.raises(InvalidModel, match="unknown function family"):
            model_from_config({"effort_cost": {"kind": "cubic"}})

    def test_check_model_lipschitz_and_utility(self):
        spec = model_from_config({"system_rhs": {"y_coef": -2.0}, "end_pay_utility": {"kind": "cara", "rho": 0.5}})
        assert check_model(spec, -1, 1, -1, 1) == pytest.approx(2.0)
        with pytest.raises(InvalidModel):
            check_model(spec, -1, 1, -1, 3.0)  # g^{-1} undefined beyond 1/rho

    def test_families(self):
        g = Cara(0.5)
        c = np.linspace(-2, 2, 11)
        assert np.allclose(g.inverse(g(c)), c, rtol=0, atol=1e-12)
        assert np.all(np.diff(g(c)) > 0)
        assert Linear(2.0, 1.0).inverse(Linear(2.0, 1.0)(3.0)) == 3.0
        assert Quadratic(1, 2, 3)(2.0) == 1 + 4 + 12

    def test_payment_range_discretization(self):
        spec = model_from_config({"payments": {"low": 0.0, "high": 0.2, "n": 11}})
        assert len(spec.payment_set) == 11
        assert spec.payment_set[-1] == pytest.approx(0.2)
