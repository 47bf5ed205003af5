"""On-disk format of a solved ValueField.

A ``.npz`` archive holding little-endian arrays plus a JSON header::

    header   : JSON text (format, version, solver_version, model_hash, grid,
               dim_order, endianness, dtypes)
    phi      : <f8, shape (n_w, n_y, n_t + 1), dimension order (w, y, t)
    u_index  : <i2, same shape, index into controls
    p_index  : <i2, same shape, index into payments
    controls : <f8, payments : <f8
    thetas   : <f8, per control (nan = control cannot be incentivized)
"""

from __future__ import annotations

import json

import numpy as np

from . import __version__
from .errors import ArtifactMismatch
from .hjb_solver import Grid, ValueField

FORMAT = "pacontract-valuefield"
VERSION = 1
DTYPES = {"phi": "<f8", "u_index": "<i2", "p_index": "<i2", "controls": "<f8", "payments": "<f8", "thetas": "<f8"}


def save_field(path, field: ValueField, model_hash: str, extra=None):
    header = {
        "format": FORMAT,
        "version": VERSION,
        "solver_version": __version__,
        "model_hash": model_hash,
        "grid": field.grid.to_dict(),
        "dim_order": ["w", "y", "t"],
        "endianness": "little",
        "dtypes": DTYPES,
    }
    if extra:
        header.update(extra)
    arrays = {k: np.ascontiguousarray(getattr(field, k), dtype=dt) for k, dt in DTYPES.items()}
    with open(path, "wb") as fh:
        np.savez(fh, header=np.array(json.dumps(header, sort_keys=True)), **arrays)
    return header


def load_field(path, expected_hash=None):
    """Return (field, header); raise ArtifactMismatch on a foreign or stale file."""
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(str(data["header"]))
        if header.get("format") != FORMAT or header.get("version") != VERSION:
            raise ArtifactMismatch(f"{path} is not a version-{VERSION} {FORMAT} file")
        if expected_hash is not None and header.get("model_hash") != expected_hash:
            raise ArtifactMismatch(
                f"{path} was solved for model {header.get('model_hash', '?')[:12]}, config describes {expected_hash[:12]}"
            )
        arrays = {k: np.asarray(data[k], dtype=dt).astype(dt[1:]) for k, dt in DTYPES.items()}
    field = ValueField(Grid(**header["grid"]), arrays["phi"], arrays["u_index"], arrays["p_index"],
                       arrays["controls"], arrays["payments"], arrays["thetas"])
    return field, header
