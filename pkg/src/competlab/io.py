"""Snapshots (raw binary + JSON sidecar) and CSV output."""
import hashlib
import json
from pathlib import Path

import numpy as np

from .fields import spec_from_dict
from .grid import Grid, GridState


def save_state(state, stem):
    """Write <stem>.bin (little-endian float64, C order) and <stem>.json."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    data = np.ascontiguousarray(state.values, dtype="<f8")
    raw = data.tobytes()
    stem.with_suffix(".bin").write_bytes(raw)
    meta = {
        "grid": state.grid.as_dict(),
        "spec": state.spec.as_dict(),
        "gamma": state.gamma,
        "beta": state.beta,
        "shape": list(data.shape),
        "dtype": "<f8",
        "sha256": hashlib.sha256(raw).hexdigest(),
    }
    stem.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return stem


def load_state(path):
    """Load a snapshot from either file of the pair (or the common stem)."""
    p = Path(path)
    stem = p.with_suffix("") if p.suffix in (".bin", ".json") else p
    meta = json.loads(stem.with_suffix(".json").read_text())
    raw = stem.with_suffix(".bin").read_bytes()
    if hashlib.sha256(raw).hexdigest() != meta["sha256"]:
        raise ValueError(f"checksum mismatch for {stem}.bin")
    values = np.frombuffer(raw, dtype=meta["dtype"]).reshape(meta["shape"]).copy()
    g = meta["grid"]
    grid = Grid(g["dim"], g["half_width"], g["h"])
    return GridState(grid, values, spec_from_dict(meta["spec"]), meta["gamma"], meta["beta"],
                     check=values.shape[0] >= 2 and bool(np.all(values >= 0)))


def write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join("%.17g" % v for v in row) + "\n")
    return path


def read_csv(path):
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return header, data


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_default) + "\n")
    return path


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    return str(o)
