"""Forward simulation of the optimal contract.

Each path runs an Euler-Maruyama pass over the revenue SDE while the
principal updates the bookkeeping state (w*, y*) and pays according to the
feedback map of a solved :class:`~pacontract.hjb_solver.ValueField`.

Noise comes from numpy's counter-based Philox generator.  Path ``i`` of an
ensemble with base seed ``s`` uses ``Philox(SeedSequence([s, i]))``, so a
path's noise does not depend on how the ensemble is chunked or threaded.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import GridEscape
from .hjb_solver import PolicyEvaluator, ValueField, in_bounds
from .model import ModelSpec

CHUNK = 1024


def path_rng(seed) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def ensemble_seed(base_seed: int, i: int):
    return (int(base_seed), int(i))


@dataclass
class ContractPath:
    times: np.ndarray
    x: np.ndarray
    w_star: np.ndarray
    y_star: np.ndarray
    u_star: np.ndarray  # per step, length M
    pi_star: np.ndarray
    xi: np.ndarray
    end_pay: float
    noise_seed: object
    agent_payoff: float = math.nan
    principal_payoff: float = math.nan

    def to_csv(self, path):
        """Columns t, x, w_star, y_star, u_star, pi_star, xi; the row at t=T leaves the per-step columns empty."""
        with open(path, "w", newline="") as fh:
            fh.write("t,x,w_star,y_star,u_star,pi_star,xi\n")
            m = self.u_star.size
            for k in range(m + 1):
                row = [self.times[k], self.x[k], self.w_star[k], self.y_star[k]]
                tail = [self.u_star[k], self.pi_star[k], self.xi[k]] if k < m else None
                fh.write(",".join(repr(float(v)) for v in row))
                fh.write("," + (",".join(repr(float(v)) for v in tail) if tail else ",,") + "\n")


@dataclass
class PathBatch:
    """Per-path results of one simulation run (full trajectories only when recorded)."""

    seeds: list
    agent_payoff: np.ndarray
    principal_payoff: np.ndarray
    w_T: np.ndarray
    end_pay: np.ndarray
    mean_u: np.ndarray
    y_min: np.ndarray
    y_max: np.ndarray
    band_fraction: np.ndarray | None = None
    paths: list | None = None


def _simulate_chunk(field, spec, seeds, n_steps, deviation, record, band, offset):
    g = field.grid
    T = spec.horizon
    dt = T / n_steps
    sq = math.sqrt(dt)
    sig = spec.revenue_vol
    n = len(seeds)
    z = np.empty((n, n_steps))
    for i, s in enumerate(seeds):
        z[i] = path_rng(s).standard_normal(n_steps)
    thetas = np.nan_to_num(field.thetas, nan=0.0)
    policy = PolicyEvaluator(field, spec)

    x = np.zeros(n)
    w = np.full(n, float(spec.participation_payoff))
    y = np.full(n, float(spec.y0))
    agent = np.zeros(n)
    principal = np.zeros(n)
    u_sum = np.zeros(n)
    y_lo = y.copy()
    y_hi = y.copy()
    inside = np.zeros(n)
    if record:
        X = np.empty((n, n_steps + 1)); W = np.empty_like(X); Y = np.empty_like(X)
        U = np.empty((n, n_steps)); P = np.empty_like(U); XI = np.empty_like(U)
        X[:, 0], W[:, 0], Y[:, 0] = x, w, y

    for k in range(n_steps):
        t = k * T / n_steps
        tm = t + 0.5 * dt
        a_i, p_i = policy.indices(w, y, t)
        u = field.controls[a_i]
        pi = field.payments[p_i]
        th = thetas[a_i]
        act = u if deviation is None else np.asarray(deviation(k, t, u), float)
        mu_rec = spec.revenue_drift(tm, u)
        ra = spec.agent_pay_utility(pi)
        h_rec = spec.effort_cost(u)
        if band is not None:
            inside += (y >= band[0]) & (y <= band[1])
        dx = spec.revenue_drift(tm, act) * dt + sig * sq * z[:, k]
        principal += (mu_rec + spec.principal_running_reward(y, pi)) * dt
        agent += (ra - spec.effort_cost(act)) * dt
        u_sum += u
        x = x + dx
        w = w - (ra - h_rec) * dt + th * (dx - mu_rec * dt)
        y = y + spec.system_rhs(tm, y, u) * dt
        np.minimum(y_lo, y, out=y_lo)
        np.maximum(y_hi, y, out=y_hi)
        bad = ~in_bounds(g, w, y)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            wi_ok = g.w_min <= w[i] <= g.w_max
            raise GridEscape(k + 1, offset + i, "y_star" if wi_ok else "w_star", float(y[i] if wi_ok else w[i]))
        if record:
            X[:, k + 1], W[:, k + 1], Y[:, k + 1] = x, w, y
            U[:, k], P[:, k], XI[:, k] = u, pi, th

    end_pay = spec.end_pay_inverse(w)
    agent = agent + spec.end_pay_utility(end_pay)
    principal = principal + spec.principal_terminal_reward(y) - end_pay
    paths = None
    if record:
        times = np.array([k * T / n_steps for k in range(n_steps + 1)])
        paths = [
            ContractPath(times, X[i], W[i], Y[i], U[i], P[i], XI[i], float(end_pay[i]), seeds[i],
                         float(agent[i]), float(principal[i]))
            for i in range(n)
        ]
    frac = inside / n_steps if band is not None else None
    return PathBatch(list(seeds), agent, principal, w, end_pay, u_sum / n_steps, y_lo, y_hi, frac, paths)


def simulate(field: ValueField, spec: ModelSpec, seeds, n_steps: int, deviation=None, record=False,
             band=None, workers=1) -> PathBatch:
    """Simulate one path per seed.

    ``deviation(k, t, u_rec)`` returns the control the agent really applies
    on step k; None means the agent follows the recommendation.  ``band``
    (lo, hi) adds the per-path fraction of steps with y* inside it.
    """
    if n_steps < field.grid.n_t:
        raise ValueError(f"n_steps={n_steps} must be >= the solver's n_t={field.grid.n_t}")
    seeds = list(seeds)
    chunks = [(seeds[i:i + CHUNK], i) for i in range(0, len(seeds), CHUNK)]

    def run(chunk):
        return _simulate_chunk(field, spec, chunk[0], n_steps, deviation, record, band, chunk[1])

    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(c) for c in chunks]

    def cat(name):
        vals = [getattr(p, name) for p in parts]
        return None if vals[0] is None else np.concatenate(vals)

    return PathBatch(
        seeds,
        cat("agent_payoff"), cat("principal_payoff"), cat("w_T"), cat("end_pay"), cat("mean_u"),
        cat("y_min"), cat("y_max"), cat("band_fraction"),
        [p for part in parts for p in part.paths] if record else None,
    )


def synthesize_path(field: ValueField, spec: ModelSpec, seed, n_steps: int) -> ContractPath:
    """One contract realization; identical arguments give a bit-identical path."""
    return simulate(field, spec, [seed], n_steps, record=True).paths[0]


def mean_se(v):
    v = np.asarray(v, float)
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))


def ensemble(field: ValueField, spec: ModelSpec, n_paths: int, base_seed: int, n_steps=None, band=None,
             workers=1) -> dict:
    """Monte Carlo summary of principal and agent payoffs over ``n_paths`` seeded paths."""
    if n_paths < 2:
        raise ValueError("ensemble needs n_paths >= 2")
    n_steps = field.grid.n_t if n_steps is None else n_steps
    seeds = [ensemble_seed(base_seed, i) for i in range(n_paths)]
    batch = simulate(field, spec, seeds, n_steps, band=band, workers=workers)
    return summarize(batch, spec, base_seed, n_steps)


def summarize(batch: PathBatch, spec, base_seed, n_steps) -> dict:
    pm, pse = mean_se(batch.principal_payoff)
    am, ase = mean_se(batch.agent_payoff)
    out = {
        "n_paths": len(batch.seeds),
        "n_steps": n_steps,
        "base_seed": base_seed,
        "participation_payoff": spec.participation_payoff,
        "principal_mean": pm,
        "principal_se": pse,
        "agent_mean": am,
        "agent_se": ase,
        "w_T_mean": float(batch.w_T.mean()),
        "w_T_sd": float(batch.w_T.std(ddof=1)),
        "end_pay_mean": float(batch.end_pay.mean()),
        "mean_control": float(batch.mean_u.mean()),
        "y_min": float(batch.y_min.min()),
        "y_max": float(batch.y_max.max()),
    }
    if batch.band_fraction is not None:
        out["band_fraction_min"] = float(batch.band_fraction.min())
        out["band_fraction_mean"] = float(batch.band_fraction.mean())
    return out


def write_report(path, report: dict):
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
