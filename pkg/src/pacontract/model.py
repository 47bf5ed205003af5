"""Problem description for the principal-agent control problem.

A :class:`ModelSpec` bundles the revenue and system dynamics, the two
parties' reward functions and the finite control/payment sets.  All
callables must accept numpy arrays and broadcast.

Signatures::

    revenue_drift(t, a)            -> mu
    system_rhs(t, y, a)            -> dy/dt
    principal_running_reward(y, p) -> r^P
    principal_terminal_reward(y)   -> q
    agent_pay_utility(p)           -> r^A
    effort_cost(a)                 -> h
    end_pay_utility(c)             -> g
    end_pay_inverse(w)             -> g^{-1}
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

import numpy as np

from .errors import InvalidModel, NoIncentivizingSensitivity

# Relative tolerance used to resolve near-ties in every argmax.
TIE_RTOL = 1e-10


@dataclass(frozen=True)
class ModelSpec:
    revenue_drift: Callable
    revenue_vol: float
    system_rhs: Callable
    principal_running_reward: Callable
    principal_terminal_reward: Callable
    agent_pay_utility: Callable
    effort_cost: Callable
    end_pay_utility: Callable
    end_pay_inverse: Callable
    control_set: tuple
    payment_set: tuple
    horizon: float
    participation_payoff: float
    y0: float
    # canonical JSON-able description; used to fingerprint artifacts
    description: Mapping[str, Any] | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "control_set", tuple(float(a) for a in self.control_set))
        object.__setattr__(self, "payment_set", tuple(float(p) for p in self.payment_set))
        if not self.revenue_vol >= 0:
            raise InvalidModel(f"revenue_vol must be >= 0, got {self.revenue_vol}")
        if not self.horizon > 0:
            raise InvalidModel(f"horizon must be > 0, got {self.horizon}")
        for name in ("control_set", "payment_set"):
            values = getattr(self, name)
            if not values:
                raise InvalidModel(f"{name} is empty")
            if any(b <= a for a, b in zip(values, values[1:])):
                raise InvalidModel(f"{name} must be strictly ascending: {values}")

    @property
    def controls(self) -> np.ndarray:
        return np.asarray(self.control_set)

    @property
    def payments(self) -> np.ndarray:
        return np.asarray(self.payment_set)


def check_model(spec: ModelSpec, y_lo: float, y_hi: float, w_lo=None, w_hi=None, n=201) -> float:
    """Sample the model's standing assumptions; return the empirical Lipschitz bound of f in y.

    Raises InvalidModel if g is not strictly increasing / not inverted by
    end_pay_inverse, if h decreases along the control set, or if f looks
    non-Lipschitz over [y_lo, y_hi].
    """
    if w_lo is not None and w_hi is not None:
        w = np.linspace(w_lo, w_hi, n)
        c = spec.end_pay_inverse(w)
        if not np.all(np.isfinite(c)):
            raise InvalidModel("end_pay_inverse is not finite on the w range")
        if np.any(np.diff(c) <= 0):
            raise InvalidModel("end_pay_utility is not strictly increasing on the w range")
        back = spec.end_pay_utility(c)
        if not np.allclose(back, w, rtol=1e-9, atol=1e-9):
            raise InvalidModel("end_pay_inverse does not invert end_pay_utility")
    h = np.asarray(spec.effort_cost(spec.controls), float)
    if np.any(np.diff(h) < 0):
        raise InvalidModel(f"effort_cost decreases along the control set: {h}")
    y = np.linspace(y_lo, y_hi, n)
    lip = 0.0
    for t in np.linspace(0.0, spec.horizon, 9):
        for a in spec.control_set:
            f = np.broadcast_to(spec.system_rhs(t, y, a), y.shape)
            if not np.all(np.isfinite(f)):
                raise InvalidModel(f"system_rhs not finite for a={a}, t={t}")
            slope = np.abs(np.diff(f)) / np.diff(y)
            lip = max(lip, float(slope.max()) if slope.size else 0.0)
    if not math.isfinite(lip):
        raise InvalidModel("system_rhs has no finite Lipschitz bound on the sampled range")
    return lip


# ---------------------------------------------------------------------------
# incentive sensitivity
# ---------------------------------------------------------------------------

def incentive_values(controls, costs, z):
    """-h(a) + z*a for every control; theta and the pointwise IC check share this expression."""
    return -costs + z * controls


def _argmax_set(controls, costs, z):
    # exact comparison: a member here is an exact maximizer, so the IC gap is exactly zero
    vals = incentive_values(controls, costs, z)
    return vals >= vals.max()


def default_z_max(spec: ModelSpec) -> float:
    """A z large enough that max(control_set) maximizes -h(a) + z*a."""
    a = spec.controls
    h = np.asarray(spec.effort_cost(a), float)
    if a.size == 1:
        return 1.0
    spread = float(h.max() - h.min())
    return 2.0 * spread / float(np.diff(a).min()) + 1.0


def theta(a: float, spec: ModelSpec, z_max: float | None = None, z_tol: float | None = None) -> float:
    """Smallest z >= 0 (to within z_tol) making ``a`` a maximizer of -h(a') + z*a' over the control set.

    Bisects on "the largest maximizer is >= a", which is monotone in z.
    """
    controls = spec.controls
    matches = np.flatnonzero(controls == a)
    if matches.size == 0:
        raise ValueError(f"{a!r} is not in the control set {spec.control_set}")
    k = int(matches[0])
    costs = np.asarray(spec.effort_cost(controls), float)
    if z_max is None:
        z_max = default_z_max(spec)
    if z_tol is None:
        z_tol = 1e-9 * max(1.0, z_max)
    if z_tol <= 0:
        raise ValueError("z_tol must be positive")

    def reaches(z):
        return np.flatnonzero(_argmax_set(controls, costs, z)).max() >= k

    def member(z):
        return bool(_argmax_set(controls, costs, z)[k])

    if member(0.0):
        return 0.0
    if reaches(0.0) or not reaches(z_max):
        raise NoIncentivizingSensitivity(a, z_max)
    lo, hi = 0.0, float(z_max)
    while hi - lo > z_tol:
        mid = 0.5 * (lo + hi)
        if reaches(mid):
            hi = mid
        else:
            lo = mid
    if member(hi):
        return hi
    # membership interval narrower than the bisection bracket
    for z in np.linspace(lo, hi, 65):
        if member(z):
            return float(z)
    raise NoIncentivizingSensitivity(a, z_max)


def theta_table(spec: ModelSpec, z_max=None, z_tol=None) -> dict:
    """Map every control to its sensitivity; controls that no z incentivizes map to None."""
    table = {}
    for a in spec.control_set:
        try:
            table[a] = theta(a, spec, z_max, z_tol)
        except NoIncentivizingSensitivity:
            table[a] = None
    return table


# ---------------------------------------------------------------------------
# Hamiltonian
# ---------------------------------------------------------------------------

def _pair(d):
    if isinstance(d, tuple):
        return d
    return d, d


def enumerate_candidates(spec, t, y, dw, dy, dww, thetas):
    """Evaluate the HJB integrand for every admissible (a, p).

    ``dw`` and ``dy`` are either a single derivative or a ``(backward,
    forward)`` pair; with a pair, each candidate picks the one-sided
    difference on the upwind side of its own drift.

    Returns (values, scales, a_index, p_index) where values has a leading
    candidate axis ordered by control, then payment.
    """
    y = np.asarray(y, float)
    dwb, dwf = _pair(dw)
    dyb, dyf = _pair(dy)
    pays = spec.payments
    ra = np.broadcast_to(np.asarray(spec.agent_pay_utility(pays), float), pays.shape)
    rp = [spec.principal_running_reward(y, p) for p in pays]
    sig = spec.revenue_vol
    vals, scales, a_idx, p_idx = [], [], [], []
    for i, a in enumerate(spec.control_set):
        th = thetas.get(a)
        if th is None:
            continue
        h = float(spec.effort_cost(a))
        f = spec.system_rhs(t, y, a)
        adv = f * np.where(f > 0, dyf, dyb)
        mu = spec.revenue_drift(t, a)
        diff = 0.5 * (th * sig) ** 2 * dww
        base = adv + mu + diff
        base_scale = np.abs(adv) + np.abs(mu) + np.abs(diff)
        for j in range(pays.size):
            bw = -(ra[j] - h)
            drift = bw * (dwf if bw > 0 else dwb)
            vals.append(drift + base + rp[j])
            scales.append(np.abs(drift) + base_scale + np.abs(rp[j]))
            a_idx.append(i)
            p_idx.append(j)
    shape = np.broadcast_shapes(*(np.shape(v) for v in vals))
    vals = np.stack([np.broadcast_to(v, shape) for v in vals])
    scales = np.stack([np.broadcast_to(s, shape) for s in scales])
    return vals, scales, np.asarray(a_idx), np.asarray(p_idx)


def select(vals, scales):
    """Max over the candidate axis and the first candidate within the tie tolerance of it."""
    best = vals.max(axis=0)
    tol = TIE_RTOL * (1.0 + scales.max(axis=0))
    k = np.argmax(vals >= best - tol, axis=0)
    return best, k


def hamiltonian_indices(spec, t, y, dw, dy, dww, thetas):
    """Vectorized Hamiltonian; returns (value, control index, payment index) arrays."""
    vals, scales, a_idx, p_idx = enumerate_candidates(spec, t, y, dw, dy, dww, thetas)
    best, k = select(vals, scales)
    return best, a_idx[k], p_idx[k]


def hamiltonian(spec: ModelSpec, t, y, dw, dy, dww, theta_table):
    """Max and argmax over (p, a) of the HJB integrand.

    Ties (to relative tolerance TIE_RTOL) go to the smallest control, then
    the smallest payment.  Accepts scalars or broadcastable arrays.
    """
    best, ia, ip = hamiltonian_indices(spec, t, y, dw, dy, dww, theta_table)
    u = spec.controls[ia]
    p = spec.payments[ip]
    if np.ndim(best) == 0:
        return float(best), float(u), float(p)
    return best, u, p


# ---------------------------------------------------------------------------
# built-in function families
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Constant:
    value: float = 0.0

    def __call__(self, x):
        return np.zeros_like(np.asarray(x, float)) + self.value


@dataclass(frozen=True)
class Linear:
    slope: float = 1.0
    intercept: float = 0.0

    def __call__(self, x):
        return self.slope * np.asarray(x, float) + self.intercept

    def inverse(self, v):
        return (np.asarray(v, float) - self.intercept) / self.slope


@dataclass(frozen=True)
class Quadratic:
    c0: float = 0.0
    c1: float = 0.0
    c2: float = 0.0

    def __call__(self, x):
        x = np.asarray(x, float)
        return self.c0 + self.c1 * x + self.c2 * x * x


@dataclass(frozen=True)
class ExponentialBand:
    """Reward -scale * [exp(sharpness*(y - high)) + exp(sharpness*(low - y))]."""

    scale: float
    sharpness: float
    low: float
    high: float

    def __call__(self, y):
        y = np.asarray(y, float)
        return -self.scale * (np.exp(self.sharpness * (y - self.high)) + np.exp(self.sharpness * (self.low - y)))


@dataclass(frozen=True)
class Cara:
    """Concave utility g(c) = (1 - exp(-rho*c)) / rho; its inverse needs w < 1/rho."""

    rho: float

    def __call__(self, c):
        return -np.expm1(-self.rho * np.asarray(c, float)) / self.rho

    def inverse(self, w):
        w = np.asarray(w, float)
        with np.errstate(invalid="ignore", divide="ignore"):
            return -np.log1p(-self.rho * w) / self.rho


@dataclass(frozen=True)
class AffineDrift:
    """Revenue drift mu(t, a) = a_coef * a + const."""

    a_coef: float = 1.0
    const: float = 0.0

    def __call__(self, t, a):
        return self.a_coef * np.asarray(a, float) + self.const


@dataclass(frozen=True)
class AffineSystem:
    """System dynamics f(t, y, a) = const + y_coef * y + a_coef * a."""

    const: float = 0.0
    y_coef: float = 0.0
    a_coef: float = 0.0

    def __call__(self, t, y, a):
        return self.const + self.y_coef * np.asarray(y, float) + self.a_coef * np.asarray(a, float)


@dataclass(frozen=True)
class SeparableReward:
    """Principal running reward r^P(y, p) = state_part(y) + p_coef * p."""

    state_part: Callable
    p_coef: float = -1.0

    def __call__(self, y, p):
        return self.state_part(y) + self.p_coef * np.asarray(p, float)


_SCALAR_FAMILIES = {
    "zero": lambda cfg: Constant(0.0),
    "constant": lambda cfg: Constant(float(cfg.get("value", 0.0))),
    "linear": lambda cfg: Linear(float(cfg.get("slope", 1.0)), float(cfg.get("intercept", 0.0))),
    "quadratic": lambda cfg: Quadratic(float(cfg.get("c0", 0.0)), float(cfg.get("c1", 0.0)), float(cfg.get("c2", 0.0))),
    "exponential_band": lambda cfg: ExponentialBand(
        float(cfg["scale"]), float(cfg["sharpness"]), float(cfg["low"]), float(cfg["high"])
    ),
}


def scalar_function(cfg):
    """Build a one-argument function from ``{"kind": name, **params}`` (or a bare number)."""
    if isinstance(cfg, (int, float)):
        return Constant(float(cfg))
    kind = cfg.get("kind")
    if kind not in _SCALAR_FAMILIES:
        raise InvalidModel(f"unknown function family {kind!r}; expected one of {sorted(_SCALAR_FAMILIES)}")
    try:
        return _SCALAR_FAMILIES[kind](cfg)
    except KeyError as exc:
        raise InvalidModel(f"function family {kind!r} is missing parameter {exc}") from None


def utility_function(cfg):
    kind = cfg.get("kind", "linear")
    if kind == "linear":
        g = Linear(float(cfg.get("slope", 1.0)), float(cfg.get("intercept", 0.0)))
        if g.slope <= 0:
            raise InvalidModel("linear end-pay utility needs a positive slope")
        return g
    if kind == "cara":
        rho = float(cfg["rho"])
        if rho <= 0:
            raise InvalidModel("cara utility needs rho > 0")
        return Cara(rho)
    raise InvalidModel(f"unknown end-pay utility {kind!r}; expected 'linear' or 'cara'")


def level_set(cfg):
    """A finite ascending set from a list or from ``{"low", "high", "n"}``."""
    if isinstance(cfg, Mapping):
        n = int(cfg["n"])
        if n < 1:
            raise InvalidModel("a discretized set needs n >= 1")
        if n == 1:
            return (float(cfg["low"]),)
        return tuple(float(v) for v in np.linspace(float(cfg["low"]), float(cfg["high"]), n))
    return tuple(float(v) for v in cfg)


def model_from_config(cfg: Mapping) -> ModelSpec:
    """Build a ModelSpec from the ``generic`` model family of the config schema.

    Missing functions default to zero, g defaults to the identity and the
    revenue drift defaults to mu(t, a) = a.
    """
    try:
        drift = cfg.get("revenue_drift", {})
        rhs = cfg.get("system_rhs", {})
        rp = cfg.get("principal_running_reward", {})
        g = utility_function(cfg.get("end_pay_utility", {"kind": "linear"}))
        return ModelSpec(
            revenue_drift=AffineDrift(float(drift.get("a_coef", 1.0)), float(drift.get("const", 0.0))),
            revenue_vol=float(cfg.get("revenue_vol", 0.0)),
            system_rhs=AffineSystem(float(rhs.get("const", 0.0)), float(rhs.get("y_coef", 0.0)), float(rhs.get("a_coef", 0.0))),
            principal_running_reward=SeparableReward(
                scalar_function(rp.get("state", {"kind": "zero"})), float(rp.get("p_coef", -1.0))
            ),
            principal_terminal_reward=scalar_function(cfg.get("principal_terminal_reward", {"kind": "zero"})),
            agent_pay_utility=scalar_function(cfg.get("agent_pay_utility", {"kind": "linear"})),
            effort_cost=scalar_function(cfg.get("effort_cost", {"kind": "zero"})),
            end_pay_utility=g,
            end_pay_inverse=g.inverse,
            control_set=level_set(cfg.get("controls", [0.0])),
            payment_set=level_set(cfg.get("payments", [0.0])),
            horizon=float(cfg.get("horizon", 1.0)),
            participation_payoff=float(cfg.get("participation", 0.0)),
            y0=float(cfg.get("y0", 0.0)),
            description={"family": "generic", **cfg},
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidModel(f"bad generic model config: {exc}") from None
