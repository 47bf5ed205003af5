"""Explicit monotone finite-difference solver for the principal's HJB equation.

The state is (w, y): the agent's continuation value and the engineered
system's state.  phi is stepped backward from the terminal condition
phi(w, y, T) = -g^{-1}(w) + q(y).  Each step uses upwind one-sided
differences for both drift terms, a central second difference in w, and an
exhaustive (p, a) maximization delegated to :mod:`pacontract.model`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import CflViolation, GridError, NonFiniteValue, OutOfBounds
from .model import ModelSpec, check_model, hamiltonian_indices, theta_table

SNAP = 1e-9


@dataclass(frozen=True)
class Grid:
    w_min: float
    w_max: float
    n_w: int
    y_min: float
    y_max: float
    n_y: int
    n_t: int
    horizon: float

    @property
    def w(self):
        return np.linspace(self.w_min, self.w_max, self.n_w)

    @property
    def y(self):
        return np.linspace(self.y_min, self.y_max, self.n_y)

    @property
    def dw(self):
        return (self.w_max - self.w_min) / (self.n_w - 1)

    @property
    def dy(self):
        return (self.y_max - self.y_min) / (self.n_y - 1)

    @property
    def dt(self):
        return self.horizon / self.n_t

    @property
    def times(self):
        return np.linspace(0.0, self.horizon, self.n_t + 1)

    def midpoint(self, n):
        return (n + 0.5) * self.dt

    def refined(self, n_t=None):
        """Halve both space steps; n_t defaults to four times the current count."""
        return replace(
            self,
            n_w=2 * (self.n_w - 1) + 1,
            n_y=2 * (self.n_y - 1) + 1,
            n_t=4 * self.n_t if n_t is None else n_t,
        )

    def to_dict(self):
        return {k: getattr(self, k) for k in ("w_min", "w_max", "n_w", "y_min", "y_max", "n_y", "n_t", "horizon")}


@dataclass
class ValueField:
    """Solved value function and feedback policy on a Grid.

    Arrays are indexed (w-node, y-node, t-step).  Policy entry n < n_t is the
    argmax used on the step from t_{n+1} back to t_n; entry n_t is the argmax
    of the terminal data at t = T.
    """

    grid: Grid
    phi: np.ndarray
    u_index: np.ndarray
    p_index: np.ndarray
    controls: np.ndarray
    payments: np.ndarray
    thetas: np.ndarray  # per control; nan where the control cannot be incentivized

    @property
    def policy_u(self):
        return self.controls[self.u_index]

    @property
    def policy_pi(self):
        return self.payments[self.p_index]

    @property
    def theta_map(self):
        return {float(a): (None if math.isnan(th) else float(th)) for a, th in zip(self.controls, self.thetas)}

    def value_at(self, w, y, step=0):
        return bilinear(self.phi[:, :, step], self.grid, w, y)


# ---------------------------------------------------------------------------
# grid construction and checks
# ---------------------------------------------------------------------------

def _thetas(spec, thetas=None):
    return theta_table(spec) if thetas is None else thetas


def y_envelope(spec: ModelSpec, n=4000):
    """Range of y reached from y0 under the two extreme constant controls (explicit Euler, fine step)."""
    dt = spec.horizon / n
    lo = hi = spec.y0
    for a in (spec.control_set[0], spec.control_set[-1]):
        y = spec.y0
        for k in range(n):
            y = y + dt * float(spec.system_rhs((k + 0.5) * dt, y, a))
            lo, hi = min(lo, y), max(hi, y)
    return lo, hi


def w_half_width(spec: ModelSpec, thetas=None, w_sd=3.0, deviation_envelope=False):
    """Half-width of the default w range: w_sd * theta_max * sigma * sqrt(T) + T * max|r^A - h|.

    With ``deviation_envelope`` the bound also covers the worst drift a
    deviating agent can impose on the principal's bookkeeping.
    """
    thetas = _thetas(spec, thetas)
    active = [a for a, th in thetas.items() if th is not None]
    theta_max = max(thetas[a] for a in active)
    T = spec.horizon
    ra = np.asarray(spec.agent_pay_utility(spec.payments), float)
    h = np.asarray([float(spec.effort_cost(a)) for a in active])
    r_t = T * float(np.abs(ra[:, None] - h[None, :]).max())
    half = w_sd * theta_max * spec.revenue_vol * math.sqrt(T) + r_t
    if deviation_envelope and theta_max > 0:
        ts = np.linspace(0.0, T, 257)
        mus = np.array([np.broadcast_to(spec.revenue_drift(ts, a), ts.shape) for a in spec.control_set])
        spread = float((mus.max(axis=0) - mus.min(axis=0)).max())
        half += T * theta_max * spread
    return half if half > 0 else 1.0


def stability_rate(spec, grid, thetas, times):
    """max over times, y-nodes and candidates of (theta sigma)^2/dw^2 + |w-drift|/dw + |f|/dy.

    The explicit step is monotone iff dt * rate <= 1.
    """
    ra = np.asarray(spec.agent_pay_utility(spec.payments), float)
    y = grid.y
    rate = 0.0
    for a, th in thetas.items():
        if th is None:
            continue
        h = float(spec.effort_cost(a))
        diff = (th * spec.revenue_vol / grid.dw) ** 2
        drift = float(np.abs(ra - h).max()) / grid.dw
        f = max(float(np.abs(np.broadcast_to(spec.system_rhs(t, y, a), y.shape)).max()) for t in times)
        rate = max(rate, diff + drift + f / grid.dy)
    return rate


def check_cfl(spec: ModelSpec, grid: Grid, thetas=None):
    thetas = _thetas(spec, thetas)
    mids = (np.arange(grid.n_t) + 0.5) * grid.dt
    rate = stability_rate(spec, grid, thetas, np.concatenate([mids, [grid.horizon]]))
    if grid.dt * rate > 1.0:
        need = math.ceil(grid.horizon * rate)
        raise CflViolation(
            f"dt={grid.dt:.6g} violates the monotonicity bound dt*rate <= 1 (rate={rate:.6g}); "
            f"use n_t >= {need}"
        )
    return grid.dt * rate


def min_steps(spec: ModelSpec, grid: Grid, thetas=None, safety=0.9):
    """Smallest n_t (with a safety factor) for which check_cfl passes."""
    thetas = _thetas(spec, thetas)
    rate = stability_rate(spec, grid, thetas, np.linspace(0.0, spec.horizon, 513))
    n_t = max(1, math.ceil(spec.horizon * rate / safety))
    while True:
        try:
            check_cfl(spec, replace(grid, n_t=n_t), thetas)
            return n_t
        except CflViolation:
            n_t = math.ceil(n_t * 1.05) + 1


def auto_grid(spec: ModelSpec, n_w=41, n_y=81, n_t=None, w_sd=3.0, deviation_envelope=False,
              y_pad=0.5, thetas=None) -> Grid:
    """Grid centred on b in w (b is a node when n_w is odd) covering the y envelope plus padding."""
    thetas = _thetas(spec, thetas)
    half = w_half_width(spec, thetas, w_sd, deviation_envelope)
    b = spec.participation_payoff
    lo, hi = y_envelope(spec)
    pad = max(y_pad, 0.05 * (hi - lo))
    grid = Grid(b - half, b + half, n_w, lo - pad, hi + pad, n_y, n_t or 1, spec.horizon)
    if n_t is None:
        grid = replace(grid, n_t=min_steps(spec, grid, thetas))
    return grid


def validate_grid(spec: ModelSpec, grid: Grid, thetas=None):
    thetas = _thetas(spec, thetas)
    if grid.n_w < 3 or grid.n_y < 3 or grid.n_t < 1:
        raise GridError(f"need n_w >= 3, n_y >= 3, n_t >= 1; got {grid.n_w}, {grid.n_y}, {grid.n_t}")
    if not math.isclose(grid.horizon, spec.horizon, rel_tol=1e-12):
        raise GridError(f"grid horizon {grid.horizon} != model horizon {spec.horizon}")
    b = spec.participation_payoff
    if not grid.w_min < b < grid.w_max:
        raise GridError(f"participation payoff b={b} must lie strictly inside [{grid.w_min}, {grid.w_max}]")
    lo, hi = y_envelope(spec)
    if lo < grid.y_min or hi > grid.y_max:
        raise GridError(
            f"reachable y range [{lo:.6g}, {hi:.6g}] is not inside [{grid.y_min}, {grid.y_max}]"
        )
    check_model(spec, grid.y_min, grid.y_max, grid.w_min, grid.w_max)
    return check_cfl(spec, grid, thetas)


# ---------------------------------------------------------------------------
# finite differences and interpolation
# ---------------------------------------------------------------------------

def derivatives(phi, dw, dy):
    """One-sided first differences (backward, forward) in w and y plus the central second difference in w.

    Edge nodes reuse the only available one-sided difference and carry a
    zero second difference.
    """
    gw = np.diff(phi, axis=0) / dw
    dwb = np.concatenate([gw[:1], gw], axis=0)
    dwf = np.concatenate([gw, gw[-1:]], axis=0)
    gy = np.diff(phi, axis=1) / dy
    dyb = np.concatenate([gy[:, :1], gy], axis=1)
    dyf = np.concatenate([gy, gy[:, -1:]], axis=1)
    dww = np.zeros_like(phi)
    dww[1:-1] = (phi[2:] - 2.0 * phi[1:-1] + phi[:-2]) / (dw * dw)
    return dwb, dwf, dyb, dyf, dww


def _locate(x, lo, step, n):
    s = (np.asarray(x, float) - lo) / step
    i = np.floor(s)
    frac = s - i
    up = frac > 1.0 - SNAP
    i = np.where(up, i + 1, i)
    frac = np.where(up | (frac < SNAP), 0.0, frac)
    i = np.clip(i, 0, n - 2).astype(int)
    frac = np.where(s >= n - 1 - SNAP, 1.0, frac)
    return i, frac


def in_bounds(grid, w, y):
    tw = SNAP * max(1.0, grid.dw)
    ty = SNAP * max(1.0, grid.dy)
    w = np.asarray(w, float)
    y = np.asarray(y, float)
    return (w >= grid.w_min - tw) & (w <= grid.w_max + tw) & (y >= grid.y_min - ty) & (y <= grid.y_max + ty)


def bilinear(arr, grid, w, y):
    i, fw = _locate(w, grid.w_min, grid.dw, grid.n_w)
    j, fy = _locate(y, grid.y_min, grid.dy, grid.n_y)
    return ((1 - fw) * (1 - fy) * arr[i, j] + fw * (1 - fy) * arr[i + 1, j]
            + (1 - fw) * fy * arr[i, j + 1] + fw * fy * arr[i + 1, j + 1])


def step_index(grid, t):
    """Index n with t in [t_n, t_{n+1}); n_t for t = T."""
    n = math.floor(t / grid.dt + SNAP)
    return min(max(n, 0), grid.n_t)


# ---------------------------------------------------------------------------
# solver
# ---------------------------------------------------------------------------

def terminal_values(spec, grid):
    w = grid.w[:, None]
    y = grid.y[None, :]
    return -spec.end_pay_inverse(w) + spec.principal_terminal_reward(y)


def _sweep(spec, grid, thetas, keep=True):
    nw, ny, nt = grid.n_w, grid.n_y, grid.n_t
    y = grid.y[None, :]
    phi = np.asarray(np.broadcast_to(terminal_values(spec, grid), (nw, ny)), float).copy()
    if not np.all(np.isfinite(phi)):
        raise NonFiniteValue(nt, "non-finite terminal condition")
    dtype = np.int16
    if keep:
        hist = np.empty((nw, ny, nt + 1))
        ui = np.empty((nw, ny, nt + 1), dtype)
        pi = np.empty((nw, ny, nt + 1), dtype)
        hist[:, :, nt] = phi
        dwb, dwf, dyb, dyf, dww = derivatives(phi, grid.dw, grid.dy)
        _, a_i, p_i = hamiltonian_indices(spec, grid.horizon, y, (dwb, dwf), (dyb, dyf), dww, thetas)
        ui[:, :, nt] = a_i
        pi[:, :, nt] = p_i
    for n in range(nt - 1, -1, -1):
        dwb, dwf, dyb, dyf, dww = derivatives(phi, grid.dw, grid.dy)
        best, a_i, p_i = hamiltonian_indices(spec, grid.midpoint(n), y, (dwb, dwf), (dyb, dyf), dww, thetas)
        phi = phi + grid.dt * best
        if not np.all(np.isfinite(phi)):
            raise NonFiniteValue(n)
        if keep:
            hist[:, :, n] = phi
            ui[:, :, n] = a_i
            pi[:, :, n] = p_i
    if keep:
        return hist, ui, pi
    return phi


def solve(spec: ModelSpec, grid: Grid, thetas=None) -> ValueField:
    """Backward explicit sweep of the HJB equation on ``grid``.

    Raises CflViolation before touching any data when the step is not
    monotone, NonFiniteValue if the sweep diverges.
    """
    thetas = _thetas(spec, thetas)
    validate_grid(spec, grid, thetas)
    phi, ui, pi = _sweep(spec, grid, thetas)
    th = np.array([np.nan if thetas[a] is None else thetas[a] for a in spec.control_set])
    return ValueField(grid, phi, ui, pi, spec.controls, spec.payments, th)


def initial_value(spec, grid, thetas=None):
    """phi(b, y0, 0) without keeping the time history."""
    thetas = _thetas(spec, thetas)
    validate_grid(spec, grid, thetas)
    phi0 = _sweep(spec, grid, thetas, keep=False)
    return float(bilinear(phi0, grid, spec.participation_payoff, spec.y0))


def dyadic_grids(spec, base: Grid, levels: int, thetas=None):
    """``base`` followed by ``levels`` refinements, each halving dw and dy with n_t re-derived from the CFL bound."""
    thetas = _thetas(spec, thetas)
    grids = [base]
    for _ in range(levels):
        g = grids[-1]
        g = replace(g, n_w=2 * (g.n_w - 1) + 1, n_y=2 * (g.n_y - 1) + 1)
        g = replace(g, n_t=max(2 * grids[-1].n_t, min_steps(spec, g, thetas)))
        grids.append(g)
    return grids


def convergence_report(spec: ModelSpec, grids, thetas=None):
    """phi(b, y0, 0) on each grid, in order, as a list of (grid, value)."""
    thetas = _thetas(spec, thetas)
    return [(g, initial_value(spec, g, thetas)) for g in grids]


def successive_gaps(report):
    vals = [v for _, v in report]
    return [abs(b - a) for a, b in zip(vals, vals[1:])]


# ---------------------------------------------------------------------------
# feedback policy
# ---------------------------------------------------------------------------

class PolicyEvaluator:
    """Evaluates the feedback map at arbitrary (w, y, t); caches the difference fields per time step."""

    def __init__(self, field: ValueField, spec: ModelSpec):
        self.field = field
        self.spec = spec
        self.thetas = field.theta_map
        self._cache = {}

    def _diffs(self, n):
        if n not in self._cache:
            g = self.field.grid
            src = min(n + 1, g.n_t)
            self._cache = {n: derivatives(self.field.phi[:, :, src], g.dw, g.dy)}
        return self._cache[n]

    def indices(self, w, y, t):
        g = self.field.grid
        if not np.all(in_bounds(g, w, y)):
            raise OutOfBounds(f"query (w={w!r}, y={y!r}) is outside the grid")
        if not -SNAP <= t <= g.horizon * (1 + SNAP):
            raise OutOfBounds(f"time {t} outside [0, {g.horizon}]")
        n = step_index(g, t)
        t_eval = g.midpoint(n) if n < g.n_t else g.horizon
        dwb, dwf, dyb, dyf, dww = (bilinear(d, g, w, y) for d in self._diffs(n))
        _, a_i, p_i = hamiltonian_indices(self.spec, t_eval, y, (dwb, dwf), (dyb, dyf), dww, self.thetas)
        return a_i, p_i

    def __call__(self, w, y, t):
        a_i, p_i = self.indices(w, y, t)
        return self.field.controls[a_i], self.field.payments[p_i]


def policy_at(field: ValueField, spec: ModelSpec, w, y, t):
    """(u*, pi*) at (w, y, t): interpolate the difference fields, then redo the argmax there."""
    u, p = PolicyEvaluator(field, spec)(w, y, t)
    if np.ndim(u) == 0:
        return float(u), float(p)
    return u, p
