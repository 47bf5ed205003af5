"""Indirect load control: an aggregation of N air conditioners under a real-time price.

Units: time in hours from contract start (10am by default), power in kW per
customer, payments in currency per hour, temperatures in degrees C.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import CoverageError, InvalidParams, ParseError
from .model import Constant, ExponentialBand, Linear, ModelSpec, SeparableReward, level_set


@dataclass(frozen=True)
class Series:
    """Piecewise-linear time series; constant extrapolation outside its sample range."""

    times: tuple
    values: tuple

    def __post_init__(self):
        object.__setattr__(self, "times", tuple(float(t) for t in self.times))
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if len(self.times) != len(self.values) or len(self.times) < 2:
            raise ValueError("a series needs at least two (t, value) samples of equal length")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("series times must be strictly increasing")

    def __call__(self, t):
        return np.interp(t, self.times, self.values)

    def covers(self, horizon):
        return self.times[0] <= 0.0 and self.times[-1] >= horizon


# ---------------------------------------------------------------------------
# default profiles
# ---------------------------------------------------------------------------

def price_curve(t, base=0.03, ramp=0.02, peak=0.10, peak_time=6.0, width=1.0, horizon=8.0):
    """lambda(t) = base + ramp * t/horizon + peak * exp(-((t - peak_time)/width)^2 / 2).

    With the defaults: 0.03 at 10am, a single peak of about 0.145 at 4pm,
    always below the tariff 0.2.
    """
    t = np.asarray(t, float)
    return base + ramp * t / horizon + peak * np.exp(-0.5 * ((t - peak_time) / width) ** 2)


def default_price_series(T=8.0, step=0.25, start_hour=10.0, peak_hour=16.0, **kw) -> Series:
    if T <= 0:
        raise ValueError("horizon must be positive")
    n = max(2, int(round(T / step)) + 1)
    t = np.linspace(0.0, T, n)
    return Series(t, price_curve(t, peak_time=peak_hour - start_hour, horizon=T, **kw))


def outdoor_curve(t, mean=24.0, amplitude=2.0, start_hour=10.0, peak_hour=15.0):
    """Theta(t) = mean + amplitude * cos(2*pi*(clock - peak_hour)/24): a daily cycle peaking mid-afternoon."""
    clock = start_hour + np.asarray(t, float)
    return mean + amplitude * np.cos(2.0 * math.pi * (clock - peak_hour) / 24.0)


def default_outdoor_series(T=8.0, step=0.25, **kw) -> Series:
    n = max(2, int(round(T / step)) + 1)
    t = np.linspace(0.0, T, n)
    return Series(t, outdoor_curve(t, **kw))


# ---------------------------------------------------------------------------
# parameters and model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LoadControlParams:
    n_customers: int = 1000
    tariff: float = 0.2
    price_series: Series = field(default_factory=default_price_series)
    vol: float = 200.0
    band_low: float = 18.0
    band_high: float = 22.5
    penalty_scale: float = 10.0
    penalty_sharpness: float = 5.0
    thermal_coupling: float = 0.2
    cooling_rate: float = 1.0
    outdoor_series: Series = field(default_factory=default_outdoor_series)
    y_init: float = 22.5
    participation: float = -100.0
    control_levels: tuple = (0.0, 2.0)
    payment_levels: tuple = tuple(float(v) for v in np.linspace(0.0, 0.2, 11))
    horizon: float = 8.0

    def validate(self):
        if not self.band_low < self.y_init <= self.band_high:
            raise InvalidParams("band_low < y_init <= band_high is violated")
        if self.n_customers < 1:
            raise InvalidParams("n_customers >= 1 is violated")
        for name in ("tariff", "vol", "penalty_scale", "penalty_sharpness", "thermal_coupling", "cooling_rate", "horizon"):
            if not getattr(self, name) > 0:
                raise InvalidParams(f"{name} > 0 is violated")
        for name in ("price_series", "outdoor_series"):
            if not getattr(self, name).covers(self.horizon):
                raise InvalidParams(f"{name} does not cover [0, {self.horizon}]")
        if not self.control_levels or not self.payment_levels:
            raise InvalidParams("control_levels and payment_levels must be non-empty")

    def to_dict(self):
        d = asdict(self)
        for name in ("price_series", "outdoor_series"):
            s = getattr(self, name)
            d[name] = {"t": list(s.times), "value": list(s.values)}
        d["control_levels"] = list(self.control_levels)
        d["payment_levels"] = list(self.payment_levels)
        return d

    @classmethod
    def from_dict(cls, cfg):
        cfg = dict(cfg)
        try:
            for name in ("price_series", "outdoor_series"):
                if name in cfg and isinstance(cfg[name], dict):
                    cfg[name] = Series(cfg[name]["t"], cfg[name]["value"])
            for name in ("control_levels", "payment_levels"):
                if name in cfg:
                    cfg[name] = level_set(cfg[name])
            return cls(**cfg)
        except (TypeError, ValueError, KeyError) as exc:
            raise InvalidParams(f"bad load-control parameters: {exc}") from None


@dataclass(frozen=True)
class LoadRevenueDrift:
    """mu(t, a) = (tariff - price(t)) * N * a."""

    tariff: float
    n_customers: int
    price: Series

    def __call__(self, t, a):
        return (self.tariff - self.price(t)) * self.n_customers * np.asarray(a, float)


@dataclass(frozen=True)
class ThermalModel:
    """First-order ETP dynamics f(t, y, a) = alpha*(Theta(t) - y) - kappa*a."""

    alpha: float
    kappa: float
    outdoor: Series

    def __call__(self, t, y, a):
        return self.alpha * (self.outdoor(t) - np.asarray(y, float)) - self.kappa * np.asarray(a, float)


def build_model(params: LoadControlParams) -> ModelSpec:
    params.validate()
    g = Linear(1.0, 0.0)
    return ModelSpec(
        revenue_drift=LoadRevenueDrift(params.tariff, params.n_customers, params.price_series),
        revenue_vol=params.vol,
        system_rhs=ThermalModel(params.thermal_coupling, params.cooling_rate, params.outdoor_series),
        principal_running_reward=SeparableReward(
            ExponentialBand(params.penalty_scale, params.penalty_sharpness, params.band_low, params.band_high), -1.0
        ),
        principal_terminal_reward=Constant(0.0),
        agent_pay_utility=Linear(1.0, 0.0),
        effort_cost=Linear(params.tariff * params.n_customers, 0.0),
        end_pay_utility=g,
        end_pay_inverse=g.inverse,
        control_set=params.control_levels,
        payment_set=params.payment_levels,
        horizon=params.horizon,
        participation_payoff=params.participation,
        y0=params.y_init,
        description={"family": "loadcontrol", "params": params.to_dict()},
    )


def per_customer_rate(pi, n_customers):
    """Identical customers share the aggregate payment rate equally."""
    return np.asarray(pi, float) / n_customers


# ---------------------------------------------------------------------------
# CSV series
# ---------------------------------------------------------------------------

def load_series_csv(path, column="lambda", horizon=None) -> Series:
    """Read a two-column CSV with header ``t,<column>``.

    Raises ParseError naming the offending row, CoverageError when
    ``horizon`` is given and the samples do not span [0, horizon].
    """
    times, values = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["t", column]:
            raise ParseError(f"{path}: expected header 't,{column}', got {header!r}")
        for row_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise ParseError(f"{path}: row {row_no} has {len(row)} columns, expected 2")
            try:
                t, v = float(row[0]), float(row[1])
            except ValueError:
                raise ParseError(f"{path}: row {row_no} is not numeric: {row!r}") from None
            if not (math.isfinite(t) and math.isfinite(v)):
                raise ParseError(f"{path}: row {row_no} contains a non-finite value")
            if times and t <= times[-1]:
                raise ParseError(f"{path}: row {row_no} (t={t}) does not increase from t={times[-1]}")
            times.append(t)
            values.append(v)
    if len(times) < 2:
        raise ParseError(f"{path}: need at least two data rows")
    series = Series(times, values)
    if horizon is not None and not series.covers(horizon):
        raise CoverageError(f"{path}: samples span [{times[0]}, {times[-1]}], need [0, {horizon}]")
    return series


def load_price_csv(path, horizon=None) -> Series:
    return load_series_csv(path, "lambda", horizon)


def write_series_csv(path, series: Series, column="lambda"):
    """Write with shortest round-trip float formatting so a reload is exact."""
    with open(path, "w", newline="") as fh:
        fh.write(f"t,{column}\n")
        for t, v in zip(series.times, series.values):
            fh.write(f"{t!r},{v!r}\n")
