"""Run configuration: a versioned YAML document, validated before any run.

All values are SI (veh/m, m/s, veh/s, s, m). Unspecified keys take the defaults
below; ``resolve`` returns the complete document that was actually used.
"""
import copy

import yaml

from .errors import ConfigError, ParameterError
from .fd import from_dict

SCHEMA = "arzobs.run-config/1"

DEFAULTS = {
    "schema": SCHEMA,
    "seed": 0,
    "model": {
        "fd": {"family": "greenshield", "v_f": 40.0, "rho_m": 0.16, "gamma": 1.0},
        "tau": 60.0,
        "length": 400.0,
    },
    "reference": {"rho_star": 0.12, "v_star": None},
    "grid": {"num_cells": 41, "total_time": 240.0, "dt": None, "cfl_safety": 0.9, "output_stride": 1},
    "initial": {"kind": "sinusoid", "amplitude": 0.1, "waves": 3},
    "boundary": {"inlet_flux": None, "outlet": "density", "outlet_value": None},
    "observer": {"init": "setpoint", "exponent": "outlet", "gain_form": "exact",
                 "max_gap": 2.0, "speed_eps": 1e-6, "v_floor": 0.1, "threshold": 0.01},
    "data": {"trajectories": None, "measurements": None, "n_time_cells": 41, "n_space_cells": 41,
             "domain": None, "resolution": 0.1, "max_gap": 30.0},
    "calibration": {"scatter": None, "rho_m": None, "lanes": None, "vehicle_length": None,
                    "safety_factor": None, "n_starts": 8, "tau_grid": None},
}

_CHOICES = {
    "initial.kind": ("sinusoid", "setpoint"),
    "boundary.outlet": ("density", "velocity", "free"),
    "observer.init": ("setpoint",),
    "observer.exponent": ("outlet", "local"),
    "observer.gain_form": ("exact", "shifted"),
}
_POSITIVE = ("model.tau", "model.length", "grid.num_cells", "grid.total_time", "grid.cfl_safety",
             "grid.output_stride", "observer.max_gap", "observer.speed_eps", "observer.v_floor",
             "observer.threshold", "data.n_time_cells", "data.n_space_cells", "data.resolution",
             "data.max_gap", "calibration.n_starts", "reference.rho_star")
_INTEGER = ("seed", "grid.num_cells", "grid.output_stride", "initial.waves", "data.n_time_cells",
            "data.n_space_cells", "calibration.n_starts")


def _merge(base, over, path=""):
    out = copy.deepcopy(base)
    for key, val in over.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"{where}: unknown key")
        if isinstance(base[key], dict) and key != "fd":
            if not isinstance(val, dict):
                raise ConfigError(f"{where}: expected a mapping")
            out[key] = _merge(base[key], val, where + ".")
        else:
            out[key] = copy.deepcopy(val)
    return out


def _get(cfg, dotted):
    node = cfg
    for part in dotted.split("."):
        node = node[part]
    return node


def validate(cfg):
    if cfg.get("schema") != SCHEMA:
        raise ConfigError(f"schema: expected {SCHEMA!r}, got {cfg.get('schema')!r}")
    for path, options in _CHOICES.items():
        if _get(cfg, path) not in options:
            raise ConfigError(f"{path}: must be one of {list(options)}, got {_get(cfg, path)!r}")
    for path in _INTEGER:
        val = _get(cfg, path)
        if isinstance(val, bool) or not isinstance(val, int):
            raise ConfigError(f"{path}: expected an integer, got {val!r}")
    for path in _POSITIVE:
        val = _get(cfg, path)
        if isinstance(val, bool) or not isinstance(val, (int, float)) or not val > 0:
            raise ConfigError(f"{path}: expected a positive number, got {val!r}")
    if cfg["grid"]["num_cells"] < 2:
        raise ConfigError("grid.num_cells: need at least 2 cells")
    dt = cfg["grid"]["dt"]
    if dt is not None and not (isinstance(dt, (int, float)) and dt > 0):
        raise ConfigError(f"grid.dt: expected null or a positive number, got {dt!r}")
    amp = cfg["initial"]["amplitude"]
    if not isinstance(amp, (int, float)) or not 0 <= amp < 1:
        raise ConfigError(f"initial.amplitude: expected a number in [0, 1), got {amp!r}")
    dom = cfg["data"]["domain"]
    if dom is not None and (not isinstance(dom, list) or len(dom) != 4):
        raise ConfigError("data.domain: expected [t0, t1, x0, x1] or null")
    try:
        fd = from_dict(cfg["model"]["fd"])
    except (TypeError, ParameterError, ValueError) as exc:
        raise ConfigError(f"model.fd: {exc}") from exc
    if not 0 < cfg["reference"]["rho_star"] < fd.rho_m:
        raise ConfigError(f"reference.rho_star: must lie in (0, rho_m={fd.rho_m})")
    return cfg


def resolve(doc):
    """Defaults merged with ``doc`` and validated."""
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError("<root>: expected a mapping")
    if "schema" not in doc:
        raise ConfigError(f"schema: missing; expected {SCHEMA!r}")
    return validate(_merge(DEFAULTS, doc))


def load(path):
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    return resolve(doc)


def dump(cfg, path):
    with open(path, "w") as fh:
        yaml.safe_dump(cfg, fh, sort_keys=False)
