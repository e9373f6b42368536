"""Scenario configuration: defaults, JSON loading, validation and hashing."""

from __future__ import annotations

import copy
import hashlib
import json
import math

from .exceptions import ConfigError

SCENARIOS = ("gaussian_example", "causal_lattice", "custom")

_COMMON = {
    "dimension": 2,
    "metric": {"scalar_scale": 1.0, "vector_scale": 1.0},
    "jets": {"directions": "full", "lambda": 1.6},
    "action": {
        "s_param": None,
        "max_iters": 200,
        "grad_tol": 1e-6,
        "kappa_w": 0.01,
        "frozen_margin": 0.0,
        "armijo": 1e-4,
        "max_backtracks": 40,
    },
    "el": {
        "interior_margin": 4.0,
        "probe_axes": [1],
        "probe_offsets": [0.25, 0.5, 1.0],
        "ell_tol": 1e-5,
        "probe_reference": None,
        "probe_tol": 1e-5,
        "report_only": False,
    },
    "foliation": {
        "time_axis": 0,
        "delta": 2.0,
        "n_t": 40,
        "tilt": 0.75,
    },
    "solver": {
        "null_tol": 1e-10,
        "solve_tol": 1e-10,
        "stabilize_tol": 1e-10,
        "strip_tol": 1e-12,
        "strip_step": 2.0,
    },
    "causal": {"r_K": None, "cone_r_K": None, "probe_K": None, "probe_B": None},
    "greens": {"window_margin": None},
    "state": {
        "times": None,
        "eps_T": 1e-10,
        "n_samples": 50,
        "seed": 0,
        "layers": None,
    },
    "tolerances": {
        "green_formula": 1e-10,
        "homogeneity": 1e-8,
        "adjoint": 1e-8,
        "retarded": 1e-10,
        "foliation_independence": 1e-6,
        "sigma_G": 1e-6,
        "complex_structure": 1e-8,
        "psd": 1e-10,
        "two_point": 1e-8,
        "wick": 1e-10,
        "microlocality": 1e-8,
        "time_slice_support": 1e-10,
        "time_slice_pairing": 1e-8,
    },
    "seed": 0,
}

DEFAULTS = {
    "gaussian_example": {
        "scenario": "gaussian_example",
        "grid": {"R": 8.0, "delta": 0.1},
        "truncation_tol": 1e-14,
        "kernel": {},
        "action": {"s_param": 1.0},
        "el": {"probe_reference": "offset_squared"},
        "foliation": {"delta": 0.5, "n_t": 40},
    },
    "causal_lattice": {
        "scenario": "causal_lattice",
        "lattice": {"nt": 20, "nx": 20, "spacing": 1.0},
        "kernel": {"c": 1.0, "T0": 1.7, "W0": 1.3, "slope": 0.0, "r0": 0.2},
        "jets": {"directions": "combined", "lambda": 1.6},
        "el": {"report_only": True, "interior_margin": 3.0, "probe_axes": [0, 1], "probe_offsets": [0.5]},
        "causal": {"r_K": "range"},
    },
    "custom": {"scenario": "custom", "kernel": {"type": "constant"}},
}


def _merge(base, override, path=""):
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value, where)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _allowed_keys(scenario):
    keys = set(_COMMON) | set(DEFAULTS[scenario])
    if scenario == "custom":
        keys |= {"points", "weights"}
    return keys


def _number(cfg, path, positive=False, nonneg=False, allow_none=False):
    node = cfg
    for part in path.split("."):
        node = node[part]
    if node is None and allow_none:
        return
    if isinstance(node, bool) or not isinstance(node, (int, float)) or not math.isfinite(node):
        raise ConfigError(f"{path} must be a finite number, got {node!r}", path)
    if positive and node <= 0:
        raise ConfigError(f"{path} must be positive, got {node!r}", path)
    if nonneg and node < 0:
        raise ConfigError(f"{path} must be nonnegative, got {node!r}", path)


def resolve(user):
    """Merge a user config with the scenario defaults and validate it.

    Parameters
    ----------
    user : dict
        Parsed config; must contain ``"scenario"``.

    Returns
    -------
    dict
        Fully populated config.

    Raises
    ------
    ConfigError
        Unknown scenario, unknown top-level or nested key, or an invalid value.
    """
    if not isinstance(user, dict):
        raise ConfigError("config must be a JSON object", "<root>")
    scenario = user.get("scenario")
    if scenario not in SCENARIOS:
        raise ConfigError(f"unknown scenario {scenario!r}", "scenario")
    allowed = _allowed_keys(scenario)
    for key in user:
        if key not in allowed:
            raise ConfigError(f"unknown config key {key!r}", key)
    base = _merge(_COMMON, DEFAULTS[scenario])
    for key, value in user.items():
        if isinstance(base.get(key), dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{key} must be an object", key)
            if key != "kernel":
                for sub in value:
                    if sub not in base[key]:
                        raise ConfigError(f"unknown config key {key}.{sub}", f"{key}.{sub}")
    cfg = _merge(base, user)
    _validate(cfg)
    return cfg


def _validate(cfg):
    sc = cfg["scenario"]
    if sc == "gaussian_example":
        _number(cfg, "grid.R", positive=True)
        _number(cfg, "grid.delta", positive=True)
        _number(cfg, "truncation_tol", positive=True)
    elif sc == "causal_lattice":
        for k in ("nt", "nx"):
            v = cfg["lattice"][k]
            if not isinstance(v, int) or isinstance(v, bool) or v < 2:
                raise ConfigError(f"lattice.{k} must be an integer >= 2", f"lattice.{k}")
        _number(cfg, "lattice.spacing", positive=True)
        for k in ("c", "T0", "W0"):
            _number(cfg, f"kernel.{k}", positive=True)
        _number(cfg, "kernel.slope", nonneg=True)
        _number(cfg, "kernel.r0", nonneg=True)
    else:
        if "points" not in cfg or "weights" not in cfg:
            raise ConfigError("custom scenario requires points and weights", "points")
    _number(cfg, "metric.scalar_scale", positive=True)
    _number(cfg, "metric.vector_scale", positive=True)
    _number(cfg, "action.s_param", allow_none=True)
    _number(cfg, "action.grad_tol", positive=True)
    _number(cfg, "action.kappa_w", positive=True)
    _number(cfg, "action.frozen_margin", nonneg=True)
    _number(cfg, "foliation.delta", positive=True)
    _number(cfg, "foliation.tilt", nonneg=True)
    if cfg["jets"]["directions"] not in ("full", "combined"):
        raise ConfigError("jets.directions must be 'full' or 'combined'", "jets.directions")
    n_t = cfg["foliation"]["n_t"]
    if not isinstance(n_t, int) or n_t < 2:
        raise ConfigError("foliation.n_t must be an integer >= 2", "foliation.n_t")
    for k in cfg["solver"]:
        _number(cfg, f"solver.{k}", positive=True)
    for k in cfg["tolerances"]:
        _number(cfg, f"tolerances.{k}", positive=True)
    for key in ("r_K", "cone_r_K"):
        if cfg["causal"][key] not in (None, "range"):
            _number(cfg, f"causal.{key}", positive=True)
    for key in ("probe_K", "probe_B"):
        probe = cfg["causal"][key]
        if probe is not None and not (
            isinstance(probe, list) and probe
            and all(isinstance(p, list) and len(p) == cfg["dimension"] for p in probe)
        ):
            raise ConfigError(f"causal.{key} must be a list of coordinate lists", f"causal.{key}")


def load(path):
    """Read a JSON config file and resolve it.

    Raises
    ------
    ConfigError
        On JSON syntax errors (key ``"<json>"``) and all :func:`resolve` errors.
    """
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})", "<json>") from exc
    return resolve(raw)


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=True)


def config_hash(cfg):
    """Stable 16-hex-digit hash of a resolved config."""
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()[:16]
