"""Run configuration and artifact serialization.

Configs are JSON documents with a fixed key schema (see :data:`SCHEMA`).
Time series go to NDJSON, tables to CSV, and every output directory gets
``resolved_config.json`` plus ``manifest.json``. Nothing time-dependent is
written, so equal config and seed give equal bytes.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import os
import platform
from dataclasses import asdict, is_dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .controls import AnyControl, ControlField, OpenLoopControl, RelaxedControl
from .geometry import GridSpec
from .models import PRESETS, preset_params
from .solver import DIAGNOSTIC_COLUMNS, SolverConfig, Trajectory


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


CONTROL_KINDS = ("bang-bang", "relaxed", "index", "file")

DEFAULTS: dict = {
    "preset": "budworm",
    "params": {},
    "grid": {"n_cells": [64], "extent": None},
    "solver": {"dt": 1e-3, "t_end": 2.0, "stride": 10, "allow_unstable_dt": False},
    "control": {"kind": "bang-bang", "windows": 20, "blocks": 8, "weights": None, "index": 0, "path": None},
    "experiment": {
        "windows": [5, 10, 20, 40, 80],
        "weights": [0.5, 0.5],
        "tol_fraction": 0.05,
        "pairs": 20,
        "calibration": 10,
        "n_controls": 10,
        "dt_fine": 2.5e-4,
        "levels": 4,
        "period": 2.0,
        "v_low": 0.5,
        "v_high": 1.5,
        "periods": 2,
    },
    "out": "runs/out",
    "seed": 0,
    "n_jobs": 1,
    "plot_data": False,
}

_POSITIVE = ("solver.dt", "solver.t_end", "solver.stride", "control.windows", "control.blocks",
             "experiment.tol_fraction", "experiment.pairs", "experiment.n_controls",
             "experiment.dt_fine", "experiment.period", "experiment.periods", "n_jobs")
_INTEGER = ("solver.stride", "control.windows", "control.blocks", "control.index", "experiment.pairs",
            "experiment.calibration", "experiment.n_controls", "experiment.levels", "experiment.periods",
            "seed", "n_jobs")

SCHEMA = DEFAULTS


def _merge(base: dict, over: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        loc = f"{where}{key}"
        if key not in base:
            raise ConfigError(f"unknown key '{loc}'")
        if isinstance(base[key], dict) and key != "params":
            if not isinstance(val, dict):
                raise ConfigError(f"'{loc}' must be an object")
            out[key] = _merge(base[key], val, loc + ".")
        else:
            out[key] = copy.deepcopy(val)
    return out


def _get(cfg: dict, dotted: str):
    node = cfg
    for part in dotted.split("."):
        node = node[part]
    return node


def _check(cfg: dict) -> None:
    for key in _INTEGER:
        val = _get(cfg, key)
        if isinstance(val, bool) or not isinstance(val, int):
            raise ConfigError(f"'{key}' must be an integer, got {val!r}")
    for key in _POSITIVE:
        val = _get(cfg, key)
        if isinstance(val, bool) or not isinstance(val, (int, float)) or not val > 0:
            raise ConfigError(f"'{key}' must be a positive number, got {val!r}")
    if cfg["preset"] not in PRESETS:
        raise ConfigError(f"'preset' must be one of {list(PRESETS)}, got {cfg['preset']!r}")
    allowed = preset_params(cfg["preset"])
    for key in cfg["params"]:
        if key not in allowed:
            raise ConfigError(f"unknown key 'params.{key}' for preset {cfg['preset']!r}")
    n = cfg["grid"]["n_cells"]
    if isinstance(n, int):
        n = cfg["grid"]["n_cells"] = [n]
    if not (isinstance(n, list) and 1 <= len(n) <= 2 and all(isinstance(k, int) and k > 0 for k in n)):
        raise ConfigError(f"'grid.n_cells' must be a list of 1 or 2 positive integers, got {n!r}")
    ext = cfg["grid"]["extent"]
    if ext is None:
        cfg["grid"]["extent"] = [1.0] * len(n)
    elif not (isinstance(ext, list) and len(ext) == len(n) and all(isinstance(e, (int, float)) and e > 0 for e in ext)):
        raise ConfigError(f"'grid.extent' must list {len(n)} positive lengths, got {ext!r}")
    cfg["grid"]["extent"] = [float(e) for e in cfg["grid"]["extent"]]
    if cfg["control"]["kind"] not in CONTROL_KINDS:
        raise ConfigError(f"'control.kind' must be one of {list(CONTROL_KINDS)}, got {cfg['control']['kind']!r}")
    if cfg["control"]["kind"] == "file" and not cfg["control"]["path"]:
        raise ConfigError("'control.path' is required when 'control.kind' is 'file'")
    wins = cfg["experiment"]["windows"]
    if not (isinstance(wins, list) and wins and all(isinstance(k, int) and k > 0 for k in wins)):
        raise ConfigError(f"'experiment.windows' must be a list of positive integers, got {wins!r}")
    if wins != sorted(wins):
        raise ConfigError("'experiment.windows' must be increasing")
    for key in ("control.weights", "experiment.weights"):
        lam = _get(cfg, key)
        if lam is not None and not (isinstance(lam, list) and all(isinstance(x, (int, float)) and x >= 0 for x in lam)):
            raise ConfigError(f"'{key}' must be a list of nonnegative numbers, got {lam!r}")
    if cfg["experiment"]["calibration"] >= cfg["experiment"]["pairs"]:
        raise ConfigError("'experiment.calibration' must be smaller than 'experiment.pairs'")
    if cfg["experiment"]["levels"] < 2:
        raise ConfigError("'experiment.levels' must be >= 2")
    if not isinstance(cfg["out"], str):
        raise ConfigError("'out' must be a string path")


def resolve_config(data: Optional[dict] = None, overrides: Optional[dict] = None) -> dict:
    """Fill defaults, apply overrides and validate. Returns a plain dict."""
    if data is not None and not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    cfg = _merge(DEFAULTS, data or {})
    if overrides:
        cfg = _merge(cfg, overrides)
    _check(cfg)
    return cfg


def load_config(path, overrides: Optional[dict] = None) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    try:
        return resolve_config(data, overrides)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def dump_config(cfg: dict) -> str:
    return json.dumps(cfg, indent=2, sort_keys=True) + "\n"


def config_sha(cfg: dict) -> str:
    """Hash of the resolved config; the output location is not part of it."""
    body = {k: v for k, v in cfg.items() if k != "out"}
    return hashlib.sha256(json.dumps(body, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def grid_from_config(cfg: dict) -> GridSpec:
    return GridSpec(tuple(cfg["grid"]["extent"]), tuple(cfg["grid"]["n_cells"]))


def solver_from_config(cfg: dict) -> SolverConfig:
    s = cfg["solver"]
    return SolverConfig(float(s["dt"]), float(s["t_end"]), stride=int(s["stride"]),
                        allow_unstable_dt=bool(s["allow_unstable_dt"]))


# ------------------------------------------------------------------ writers


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    if is_dataclass(x):
        return _jsonable(asdict(x))
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, float) and not np.isfinite(x):
        return repr(x)
    return x


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")
    return path


def write_ndjson(path, records: Iterable[dict]) -> Path:
    path = Path(path)
    with path.open("w") as fh:
        for rec in records:
            fh.write(json.dumps(_jsonable(rec)) + "\n")
    return path


def read_ndjson(path) -> list[dict]:
    with Path(path).open() as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for row in rows:
            wr.writerow([_cell(x) for x in row])
    return path


def _cell(x):
    x = _jsonable(x)
    if isinstance(x, float):
        return repr(x)
    if x is None:
        return ""
    return x


def write_records_csv(path, records: Sequence) -> Path:
    """CSV of dataclass rows (or dicts), columns in field order."""
    dicts = [asdict(r) if is_dataclass(r) else dict(r) for r in records]
    header = list(dicts[0]) if dicts else []
    return write_csv(path, header, ([d[k] for k in header] for d in dicts))


def trajectory_records(traj: Trajectory) -> Iterable[dict]:
    """One NDJSON record per snapshot; ``u`` is the control applied on the
    step starting at that snapshot (empty at the final time)."""
    for i in range(len(traj)):
        k = i * traj.stride
        u = traj.controls[k] if k < traj.n_steps else np.empty((0,))
        yield {"t": float(traj.times[i]), "sigma": traj.sigma[i], "v": traj.v[i], "w": traj.w[i], "u": u}


def write_trajectory(path, traj: Trajectory) -> Path:
    return write_ndjson(path, trajectory_records(traj))


def write_diagnostics(path, traj: Trajectory) -> Path:
    return write_csv(path, DIAGNOSTIC_COLUMNS, traj.diagnostics_rows())


def write_long_csv(path, traj: Trajectory) -> Path:
    """Tidy long format: one row per snapshot, cell and quantity."""
    def rows():
        for i in range(len(traj)):
            for name, arr in (("sigma", traj.sigma), ("v", traj.v), ("w", traj.w)):
                for cell, val in enumerate(arr[i].ravel()):
                    yield traj.times[i], cell, name, val
    return write_csv(path, ["t", "cell", "quantity", "value"], rows())


def control_records(control: AnyControl) -> Iterable[dict]:
    for k in range(control.n_steps):
        if isinstance(control, ControlField):
            yield {"step": k, "index": control.indices[k]}
        elif isinstance(control, RelaxedControl):
            yield {"step": k, "weights": control.weights[k]}
        else:
            yield {"step": k, "u": control.values[k]}


def write_control(path, control: AnyControl) -> Path:
    return write_ndjson(path, control_records(control))


def read_control(path, dt: float) -> AnyControl:
    """Inverse of :func:`write_control`; the record keys select the type."""
    recs = read_ndjson(path)
    if not recs:
        raise ConfigError(f"control file {path} is empty")
    steps = [r.get("step") for r in recs]
    if steps != list(range(len(recs))):
        raise ConfigError(f"control file {path}: steps must run 0..{len(recs) - 1} in order")
    for key, build in (("index", lambda a: ControlField(dt, np.asarray(a, dtype=np.int64))),
                       ("weights", lambda a: RelaxedControl(dt, np.asarray(a, dtype=float))),
                       ("u", lambda a: OpenLoopControl(dt, np.asarray(a, dtype=float)))):
        if key in recs[0]:
            try:
                return build([r[key] for r in recs])
            except KeyError as exc:
                raise ConfigError(f"control file {path}: every record needs '{key}'") from exc
    raise ConfigError(f"control file {path}: records need 'index', 'weights' or 'u'")


# ----------------------------------------------------------------- manifest


def _sha_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def versions() -> dict:
    import scipy

    from . import __version__

    return {"hystrelax": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def write_manifest(out_dir, cfg: dict, command: str, artifacts: Sequence[Path]) -> Path:
    """Write ``resolved_config.json`` and ``manifest.json`` into ``out_dir``."""
    out_dir = Path(out_dir)
    resolved = out_dir / "resolved_config.json"
    resolved.write_text(dump_config(cfg))
    files = sorted({Path(a).name for a in artifacts} | {resolved.name})
    manifest = {
        "command": command,
        "config_sha": config_sha(cfg),
        "seed": cfg["seed"],
        "artifact_list": [{"name": f, "sha256": _sha_file(out_dir / f)} for f in files],
        "versions": versions(),
    }
    return write_json(out_dir / "manifest.json", manifest)


def ensure_dir(path) -> Path:
    path = Path(path)
    os.makedirs(path, exist_ok=True)
    return path
