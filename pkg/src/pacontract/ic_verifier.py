"""Incentive-compatibility checks for a synthesized contract.

Three independent witnesses:

* ``pointwise_ic_check``: the stored recommendation maximizes
  -h(a) + theta(u*) a at every node;
* ``agent_best_response``: the agent's own dynamic program over the
  principal's bookkeeping state (w*, y*) with frozen feedback maps;
* ``deviation_mc``: Monte Carlo payoffs of a fixed family of deviations.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field as dc_field

import numpy as np

from .contract_engine import ensemble_seed, mean_se, simulate
from .hjb_solver import ValueField, bilinear, derivatives
from .model import ModelSpec, incentive_values


# ---------------------------------------------------------------------------
# pointwise check
# ---------------------------------------------------------------------------

def pointwise_ic_check(field: ValueField, spec: ModelSpec) -> float:
    """max over nodes of max_a{-h(a) + theta(u*) a} - (-h(u*) + theta(u*) u*)."""
    controls = spec.controls
    costs = np.asarray(spec.effort_cost(controls), float)
    worst = 0.0
    for i in np.unique(field.u_index):
        z = field.thetas[i]
        if math.isnan(z):
            return math.inf
        vals = incentive_values(controls, costs, z)
        worst = max(worst, float(vals.max() - vals[i]))
    return worst


# ---------------------------------------------------------------------------
# agent dynamic program
# ---------------------------------------------------------------------------

def _agent_terms(spec, field, n, t):
    a_i = field.u_index[:, :, n]
    u = field.controls[a_i]
    pi = field.payments[field.p_index[:, :, n]]
    th = np.nan_to_num(field.thetas, nan=0.0)[a_i]
    ra = spec.agent_pay_utility(pi)
    base = -(ra - spec.effort_cost(u))
    f = np.broadcast_to(spec.system_rhs(t, field.grid.y[None, :], u), u.shape)
    return u, ra, th, base, f


def agent_best_response(field: ValueField, spec: ModelSpec, grid=None, refine=1, full=False):
    """Agent's optimal payoff at (b, y0, 0) when (u*, pi*, theta) are frozen feedback maps of the bookkeeping state.

    The agent picks a in the control set; that choice shifts the drift of w*
    by theta(u*) (mu(t, a) - mu(t, u*)) while y* keeps following the
    recommendation.  Each solver step is split into enough substeps
    (times ``refine``) to keep the explicit scheme monotone.
    """
    g = field.grid if grid is None else grid
    if grid is not None and grid != field.grid:
        raise ValueError("agent_best_response needs the field's own grid")
    sig = spec.revenue_vol
    dw, dy = g.dw, g.dy
    V = np.broadcast_to(g.w[:, None], (g.n_w, g.n_y)).astype(float)
    for n in range(g.n_t - 1, -1, -1):
        t = g.midpoint(n)
        u, ra, th, base, f = _agent_terms(spec, field, n, t)
        mu_rec = spec.revenue_drift(t, u)
        drifts = [base + th * (spec.revenue_drift(t, a) - mu_rec) for a in spec.control_set]
        costs = [float(spec.effort_cost(a)) for a in spec.control_set]
        diff = 0.5 * (th * sig) ** 2
        rate = float(np.max((th * sig / dw) ** 2 + max(np.abs(d).max() for d in drifts) / dw + np.abs(f) / dy))
        sub = max(1, math.ceil(g.dt * rate / 0.95)) * refine
        h = g.dt / sub
        for _ in range(sub):
            dwb, dwf, dyb, dyf, dww = derivatives(V, dw, dy)
            common = f * np.where(f > 0, dyf, dyb) + diff * dww + ra
            best = None
            for d, c in zip(drifts, costs):
                val = d * np.where(d > 0, dwf, dwb) + common - c
                best = val if best is None else np.maximum(best, val)
            V = V + h * best
    value = float(bilinear(V, g, spec.participation_payoff, spec.y0))
    return (value, V) if full else value


def pointwise_best_deviation(field: ValueField, spec: ModelSpec) -> float:
    """max over nodes and steps of max_a{theta(u*)(mu(t,a) - mu(t,u*)) - h(a)} - (-h(u*)).

    Zero means following the recommendation is a pointwise best response
    under the model's actual revenue drift.
    """
    g = field.grid
    worst = 0.0
    for n in range(g.n_t):
        t = g.midpoint(n)
        a_i = field.u_index[:, :, n]
        u = field.controls[a_i]
        th = np.nan_to_num(field.thetas, nan=0.0)[a_i]
        mu_rec = spec.revenue_drift(t, u)
        own = -spec.effort_cost(u)
        for a in spec.control_set:
            gain = th * (spec.revenue_drift(t, a) - mu_rec) - spec.effort_cost(a) - own
            worst = max(worst, float(np.max(gain)))
    return worst


# ---------------------------------------------------------------------------
# Monte Carlo deviations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Follow:
    name: str = "follow"

    def __call__(self, k, t, u):
        return u


@dataclass(frozen=True)
class ConstantControl:
    control: float
    name: str = ""

    def __call__(self, k, t, u):
        return np.full(np.shape(u), self.control)


@dataclass(frozen=True)
class Threshold:
    """Apply ``before`` until ``switch_time`` and ``after`` from then on."""

    switch_time: float
    before: float
    after: float
    name: str = ""

    def __call__(self, k, t, u):
        return np.full(np.shape(u), self.before if t < self.switch_time else self.after)


def default_strategies(spec: ModelSpec, n_switch=3):
    lo, hi = spec.control_set[0], spec.control_set[-1]
    out = [Follow(), ConstantControl(lo, "lazy")]
    out += [ConstantControl(a, f"constant[{a:g}]") for a in spec.control_set]
    for j in range(1, n_switch + 1):
        ts = spec.horizon * j / (n_switch + 1)
        if lo != hi:
            out.append(Threshold(ts, hi, lo, f"switch[{hi:g}->{lo:g}@{ts:g}]"))
            out.append(Threshold(ts, lo, hi, f"switch[{lo:g}->{hi:g}@{ts:g}]"))
    return out


def deviation_mc(field: ValueField, spec: ModelSpec, strategies, n_paths: int, base_seed: int, n_steps=None,
                 workers=1):
    """Mean and standard error of the agent's realized payoff under each strategy (common random numbers)."""
    n_steps = field.grid.n_t if n_steps is None else n_steps
    seeds = [ensemble_seed(base_seed, i) for i in range(n_paths)]
    table = []
    for s in strategies:
        dev = None if isinstance(s, Follow) else s
        batch = simulate(field, spec, seeds, n_steps, deviation=dev, workers=workers)
        m, se = mean_se(batch.agent_payoff)
        table.append((s.name, m, se))
    return table


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

@dataclass
class DeviationReport:
    participation_payoff: float
    best_response_value: float
    recommended_value: float
    recommended_se: float
    strategy_table: list
    tolerance: float
    pointwise_violation: float
    checks: dict = dc_field(default_factory=dict)

    @property
    def passed(self):
        return all(self.checks.values())

    def to_dict(self):
        d = asdict(self)
        d["strategy_table"] = [{"strategy": n, "mean": m, "se": s} for n, m, s in self.strategy_table]
        d["passed"] = self.passed
        return d

    def write(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def table(self):
        b = self.participation_payoff
        lines = [
            f"participation payoff b      {b:.6g}",
            f"agent best response (DP)    {self.best_response_value:.6g}   tol {self.tolerance:.3g}",
            f"follow recommendation (MC)  {self.recommended_value:.6g} +/- {self.recommended_se:.3g}",
            f"pointwise IC violation      {self.pointwise_violation:.3g}",
            "",
            f"{'strategy':<28}{'mean':>14}{'se':>12}{'margin/se':>12}",
        ]
        for name, m, se in self.strategy_table:
            z = (m - b) / se if se > 0 else (0.0 if m == b else math.copysign(math.inf, m - b))
            lines.append(f"{name:<28}{m:>14.6g}{se:>12.4g}{z:>12.3g}")
        lines.append("")
        for k, ok in self.checks.items():
            lines.append(f"{'PASS' if ok else 'FAIL'}  {k}")
        return "\n".join(lines)


def verify(field: ValueField, spec: ModelSpec, n_paths=2000, base_seed=0, n_steps=None, principal_gap=0.0,
           strategies=None, workers=1) -> DeviationReport:
    """Run all three witnesses; the tolerance adds the principal's grid gap and the agent DP's substep gap."""
    b = spec.participation_payoff
    viol = pointwise_ic_check(field, spec)
    best = agent_best_response(field, spec)
    agent_gap = abs(agent_best_response(field, spec, refine=2) - best)
    tol = principal_gap + agent_gap + 1e-9 * (1.0 + abs(b))
    strategies = default_strategies(spec) if strategies is None else strategies
    if not any(isinstance(s, Follow) for s in strategies):
        strategies = [Follow()] + list(strategies)
    table = deviation_mc(field, spec, strategies, n_paths, base_seed, n_steps, workers)
    rec = next((m, se) for (name, m, se), s in zip(table, strategies) if isinstance(s, Follow))
    checks = {
        "pointwise IC gap is zero": viol == 0.0,
        "agent best response within tol of b": abs(best - b) <= tol,
        "best response >= recommended - (tol + 3 se)": best >= rec[0] - tol - 3 * rec[1],
        "no deviation beats b + 3 se": all(m <= b + 3 * se + 1e-9 * (1 + abs(b)) for _, m, se in table),
        "no deviation beats best response + tol + 3 se": all(m <= best + tol + 3 * se for _, m, se in table),
    }
    return DeviationReport(b, best, rec[0], rec[1], table, tol, viol, checks)
