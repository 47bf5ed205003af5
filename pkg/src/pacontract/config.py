"""Run configuration: a JSON document with model, grid, simulation, verify and output sections.

See ``docs/config.md`` for the schema.  Every key has a default, so ``{}``
is a valid config (the all-zero generic model).
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import dataclass, field, replace
from typing import Any

from .errors import ConfigError, ContractError
from .hjb_solver import Grid, auto_grid, min_steps
from .loadcontrol import LoadControlParams, build_model, load_series_csv
from .model import ModelSpec, model_from_config, theta_table

OUTPUT_ENV = "PACONTRACT_OUTPUT_DIR"
THREADS_ENV = "PACONTRACT_THREADS"

DEFAULTS = {
    "model": {"family": "generic"},
    "grid": {"mode": "auto", "n_w": 21, "n_y": 41, "n_t": None, "w_sd": 3.0, "deviation_envelope": True,
             "y_pad": 0.5, "convergence_levels": 1},
    "simulation": {"n_paths": 10000, "n_steps": None, "base_seed": 0, "n_export_paths": 1, "band": None},
    "verify": {"n_paths": 2000, "base_seed": 1, "n_switch": 3},
    "output": {"directory": "out", "formats": ["csv", "json"]},
}


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "model":
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class RunConfig:
    model: dict = field(default_factory=lambda: dict(DEFAULTS["model"]))
    grid: dict = field(default_factory=lambda: dict(DEFAULTS["grid"]))
    simulation: dict = field(default_factory=lambda: dict(DEFAULTS["simulation"]))
    verify: dict = field(default_factory=lambda: dict(DEFAULTS["verify"]))
    output: dict = field(default_factory=lambda: dict(DEFAULTS["output"]))
    base_dir: str = "."

    @classmethod
    def from_dict(cls, data: dict, base_dir="."):
        if not isinstance(data, dict):
            raise ConfigError("config root must be a JSON object")
        unknown = set(data) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        merged = _merge(DEFAULTS, data)
        for section in DEFAULTS:
            if not isinstance(merged[section], dict):
                raise ConfigError(f"section {section!r} must be an object")
        return cls(**merged, base_dir=base_dir)

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path} is not valid JSON: {exc}") from None
        return cls.from_dict(data, os.path.dirname(os.path.abspath(path)))

    @property
    def output_dir(self):
        return os.environ.get(OUTPUT_ENV) or self.output["directory"]

    @property
    def workers(self):
        try:
            return max(1, int(os.environ.get(THREADS_ENV, "1")))
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer") from None

    # -- model ---------------------------------------------------------------

    def build_model(self) -> ModelSpec:
        cfg = dict(self.model)
        family = cfg.pop("family", "generic")
        try:
            if family == "generic":
                return model_from_config(cfg)
            if family == "loadcontrol":
                params = dict(cfg.get("params", {}))
                for key, col in (("price_csv", "lambda"), ("outdoor_csv", "theta")):
                    if key in cfg:
                        path = os.path.join(self.base_dir, cfg[key])
                        name = "price_series" if col == "lambda" else "outdoor_series"
                        s = load_series_csv(path, col, params.get("horizon", 8.0))
                        params[name] = {"t": list(s.times), "value": list(s.values)}
                return build_model(LoadControlParams.from_dict(params))
        except ContractError as exc:
            raise ConfigError(str(exc)) from None
        raise ConfigError(f"unknown model family {family!r}; expected 'generic' or 'loadcontrol'")

    # -- grid ----------------------------------------------------------------

    def build_grid(self, spec: ModelSpec, thetas=None) -> Grid:
        g = self.grid
        thetas = theta_table(spec) if thetas is None else thetas
        try:
            if g.get("mode", "auto") == "auto":
                return auto_grid(spec, int(g["n_w"]), int(g["n_y"]), g.get("n_t"), float(g["w_sd"]),
                                 bool(g["deviation_envelope"]), float(g["y_pad"]), thetas)
            if g["mode"] == "explicit":
                grid = Grid(float(g["w_min"]), float(g["w_max"]), int(g["n_w"]), float(g["y_min"]),
                            float(g["y_max"]), int(g["n_y"]), int(g.get("n_t") or 1), spec.horizon)
                if not g.get("n_t"):
                    grid = replace(grid, n_t=min_steps(spec, grid, thetas))
                return grid
        except KeyError as exc:
            raise ConfigError(f"grid section is missing {exc}") from None
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad grid section: {exc}") from None
        raise ConfigError(f"unknown grid mode {g.get('mode')!r}; expected 'auto' or 'explicit'")


def model_hash(spec: ModelSpec) -> str:
    if spec.description is None:
        raise ConfigError("model has no description to fingerprint")
    blob = json.dumps(spec.description, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def example_config() -> dict[str, Any]:
    """Packaged configuration of the indirect load-control instance."""
    return {
        "model": {"family": "loadcontrol", "params": {}},
        "grid": {"mode": "auto", "n_w": 21, "n_y": 161, "deviation_envelope": True, "convergence_levels": 2},
        "simulation": {"n_paths": 10000, "n_steps": None, "base_seed": 20140101, "n_export_paths": 1,
                       "band": [17.5, 23.0]},
        "verify": {"n_paths": 2000, "base_seed": 7, "n_switch": 3},
        "output": {"directory": "example_out"},
    }
