"""Run configuration in TOML.

Example::

    [model]
    epsilon = -2.0
    U = 4.0

    [[model.reservoirs]]        # one table per lead
    gamma = 1.0                 # or gamma_up / gamma_down
    mu = 0.5

    [[model.reservoirs]]
    gamma = 1.0
    mu = -0.5

    [grid]
    t_max = 10.0
    n_points = 256

    [vertex_grid]
    n_points = 17

    [stepper]
    T_floor = 0.01

    [path]
    T_inf = 200.0               # default: 50 x the largest model scale
    T_target = 0.01             # default: T_floor

    [initial]
    rho0 = "empty"              # empty | up | down | double | mixed, or a 4x4 array

    [output]
    record_temperatures = [1.0, 0.1]
    directory = "out"

Unknown keys are rejected.  Energies are in units of a reference rate,
times in its inverse.
"""
from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field

import numpy as np
import tomli

from .algebra import ModelParams, Reservoir, check_density, density_matrix
from .errors import ParseError, ValidationError
from .flow import FlowOptions, StepperConfig
from .timegrid import TimeGrid

DEFAULTS = {
    "grid": {"t_max": 10.0, "n_points": 256},
    "vertex_grid": {"n_points": 17},
    "stepper": {"dT_init": 0.5, "dT_min": 1e-6, "dT_max": 10.0, "error_tol": 1e-3, "T_floor": 0.01,
                "max_iter": 20, "iter_tol": 1e-8},
    "path": {"T_inf": None, "T_target": None},
    "initial": {"rho0": "empty"},
    "output": {"record_temperatures": [], "directory": "out"},
    "options": {"include_rr": False, "check_cp": True},
}
_SECTIONS = {"model"} | set(DEFAULTS)
_MODEL_KEYS = {"epsilon", "U", "reservoirs"}
_RES_KEYS = {"gamma", "gamma_up", "gamma_down", "mu"}


@dataclass
class RunConfig:
    model: ModelParams
    grid: TimeGrid
    n_vertex: int
    stepper: StepperConfig
    T_inf: float
    T_target: float
    rho0: np.ndarray = field(repr=False)
    record_temperatures: tuple
    directory: str
    options: FlowOptions
    raw: dict = field(repr=False, default_factory=dict)

    def digest(self) -> str:
        """SHA-256 of the resolved configuration (canonical JSON)."""
        text = json.dumps(self.raw, sort_keys=True, separators=(",", ":"), default=_jsonable)
        return hashlib.sha256(text.encode()).hexdigest()


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return [[[v.real, v.imag] for v in row] for row in x]
    raise TypeError(type(x))


def _location(exc):
    line = getattr(exc, "lineno", None)
    col = getattr(exc, "colno", None)
    if line is None:
        m = re.search(r"line (\d+), column (\d+)", str(exc))
        if m:
            line, col = int(m.group(1)), int(m.group(2))
    return line, col


def _number(section, key, value, positive=False, nonneg=False, integer=False):
    name = f"{section}.{key}" if section else key
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(key, f"{name} must be a number")
    if integer and int(value) != value:
        raise ValidationError(key, f"{name} must be an integer")
    if not np.isfinite(value):
        raise ValidationError(key, f"{name} must be finite")
    if positive and value <= 0:
        raise ValidationError(key, f"{name} must be positive")
    if nonneg and value < 0:
        raise ValidationError(key, f"{name} must be non-negative")
    return int(value) if integer else float(value)


def _check_keys(section, table, allowed):
    if not isinstance(table, dict):
        raise ValidationError(section, "must be a table")
    for key in table:
        if key not in allowed:
            raise ValidationError(key, f"unknown key in [{section}]")


def _reservoir(i, table):
    _check_keys(f"model.reservoirs[{i}]", table, _RES_KEYS)
    if "gamma" in table and ("gamma_up" in table or "gamma_down" in table):
        raise ValidationError("gamma", "give either gamma or gamma_up/gamma_down")
    if "gamma" in table:
        up = down = _number("", "gamma", table["gamma"], nonneg=True)
    else:
        if "gamma_up" not in table or "gamma_down" not in table:
            raise ValidationError("gamma", f"reservoir {i} needs a tunnel rate")
        up = _number("", "gamma_up", table["gamma_up"], nonneg=True)
        down = _number("", "gamma_down", table["gamma_down"], nonneg=True)
    mu = _number("", "mu", table.get("mu", 0.0))
    return Reservoir(up, down, mu)


def _rho0(spec):
    if isinstance(spec, str):
        try:
            return density_matrix(spec)
        except ValueError as exc:
            raise ValidationError("rho0", str(exc)) from None
    try:
        rho = np.array(spec, dtype=complex)
    except (TypeError, ValueError):
        raise ValidationError("rho0", "must be a preset name or a 4x4 array") from None
    if rho.shape == (4, 4, 2):
        rho = rho[..., 0] + 1j * rho[..., 1]
    if rho.shape != (4, 4):
        raise ValidationError("rho0", "must be a 4x4 array (real entries or [re, im] pairs)")
    try:
        check_density(rho, tol=1e-10)
    except ValueError as exc:
        raise ValidationError("rho0", str(exc)) from None
    return rho


def parse_config(text: str) -> RunConfig:
    """Parse and validate a TOML run configuration, filling in defaults."""
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        line, col = _location(exc)
        msg = str(exc).split(" (at line")[0]
        raise ParseError(msg, line, col) from None
    for key in doc:
        if key not in _SECTIONS:
            raise ValidationError(key, "unknown section")
    if "model" not in doc:
        raise ValidationError("model", "the [model] section is required")
    model = doc["model"]
    _check_keys("model", model, _MODEL_KEYS)
    for key in ("epsilon", "U"):
        if key not in model:
            raise ValidationError(key, "required in [model]")
    eps = _number("model", "epsilon", model["epsilon"])
    U = _number("model", "U", model["U"])
    reservoirs = model.get("reservoirs")
    if not isinstance(reservoirs, list) or not reservoirs:
        raise ValidationError("reservoirs", "at least one [[model.reservoirs]] table is required")
    params = ModelParams(eps, U, tuple(_reservoir(i, r) for i, r in enumerate(reservoirs)))

    merged = {}
    for section, defaults in DEFAULTS.items():
        table = doc.get(section, {})
        _check_keys(section, table, set(defaults))
        merged[section] = {**defaults, **table}

    g = merged["grid"]
    n_points = _number("grid", "n_points", g["n_points"], positive=True, integer=True)
    if n_points < 3:
        raise ValidationError("n_points", "grid.n_points must be at least 3")
    grid = TimeGrid.from_tmax(_number("grid", "t_max", g["t_max"], positive=True), n_points)
    n_vertex = _number("vertex_grid", "n_points", merged["vertex_grid"]["n_points"], positive=True, integer=True)
    if n_vertex < 3:
        raise ValidationError("n_points", "vertex_grid.n_points must be at least 3")
    try:
        grid.coarsen(min(n_vertex, n_points))
    except ValueError as exc:
        raise ValidationError("n_points", str(exc)) from None

    s = merged["stepper"]
    try:
        stepper = StepperConfig(
            dT_init=_number("stepper", "dT_init", s["dT_init"], positive=True),
            dT_min=_number("stepper", "dT_min", s["dT_min"], positive=True),
            dT_max=_number("stepper", "dT_max", s["dT_max"], positive=True),
            error_tol=_number("stepper", "error_tol", s["error_tol"], positive=True),
            T_floor=_number("stepper", "T_floor", s["T_floor"], nonneg=True),
            max_iter=_number("stepper", "max_iter", s["max_iter"], positive=True, integer=True),
            iter_tol=_number("stepper", "iter_tol", s["iter_tol"], positive=True))
    except ValueError as exc:
        raise ValidationError("stepper", str(exc)) from None

    p = merged["path"]
    T_inf = 50.0 * params.energy_scale() if p["T_inf"] is None else _number("path", "T_inf", p["T_inf"], positive=True)
    T_target = stepper.T_floor if p["T_target"] is None else _number("path", "T_target", p["T_target"], nonneg=True)
    T_target = max(T_target, stepper.T_floor)
    if T_target >= T_inf:
        raise ValidationError("T_target", "must lie below T_inf")

    out = merged["output"]
    recs = out["record_temperatures"]
    if not isinstance(recs, list):
        raise ValidationError("record_temperatures", "must be a list")
    recs = tuple(_number("output", "record_temperatures", T, nonneg=True) for T in recs)
    for T in recs:
        if not T_target <= T <= T_inf:
            raise ValidationError("record_temperatures", f"{T} is outside [{T_target}, {T_inf}]")
    if not isinstance(out["directory"], str):
        raise ValidationError("directory", "must be a string")

    o = merged["options"]
    for key in ("include_rr", "check_cp"):
        if not isinstance(o[key], bool):
            raise ValidationError(key, "must be true or false")
    options = FlowOptions(n_vertex=n_vertex, include_rr=o["include_rr"], check_cp=o["check_cp"])
    rho0 = _rho0(merged["initial"]["rho0"])

    raw = {"model": {"epsilon": eps, "U": U,
                     "reservoirs": [[r.gamma_up, r.gamma_down, r.mu] for r in params.reservoirs]},
           **{k: v for k, v in merged.items() if k not in ("initial", "output")},
           "path": {"T_inf": T_inf, "T_target": T_target},
           "initial": {"rho0": rho0}, "record_temperatures": list(recs)}
    return RunConfig(params, grid, n_vertex, stepper, T_inf, T_target, rho0, recs,
                     out["directory"], options, raw)


def load_config(path) -> RunConfig:
    from .errors import IoError
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text)
