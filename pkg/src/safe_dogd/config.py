"""Experiment configuration: JSON loading, defaults and cross-field checks."""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, SafeDOGDError
from .estimation import gamma_max, offset_aware_gamma
from .geometry import CONSERVATIVE, MODES, Polytope, box, is_bounded, norm_bound, regular_polygon, regular_simplex
from .network import NetworkTopology, topology_from_config

SCHEMA_VERSION = 1

DEFAULTS = {
    "mode": "convex",
    "scenario": {
        "drift": {"type": "none"},
        "target_center": None,
        "target_spread": 0.2,
        "target_margin": 0.0,
        "mirror": "entropy",
    },
    "schedule": {"c_eta": 1.0, "c0": 1.0, "eta": None, "T0": None},
    "estimation": {
        "rho": 1.0,
        "noise": "gaussian",
        "gamma": None,
        "sigma_zeta": None,
        "t0_factor": 8.0,
        "t1_constant": None,
        "projection_mode": CONSERVATIVE,
    },
    "projection": {"tol": 1e-9, "max_iter": 10_000},
    "seeds": [0],
    "output_dir": "runs",
    "workers": 1,
}

REQUIRED = (
    "schema_version",
    "scenario",
    "scenario.d",
    "scenario.m",
    "scenario.T",
    "scenario.baseline",
    "topology",
    "estimation",
    "estimation.lambda",
    "estimation.delta",
    "estimation.R",
)


def _get(block: dict, dotted: str):
    cur = block
    for key in dotted.split("."):
        if not isinstance(cur, dict) or key not in cur:
            raise KeyError(dotted)
        cur = cur[key]
    return cur


def _merge(defaults: dict, given: dict) -> dict:
    out = copy.deepcopy(defaults)
    for k, v in given.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _truth_from(block: dict) -> Polytope:
    if "polytope" in block:
        return Polytope.from_dict(block["polytope"])
    gen = block.get("generator")
    if gen is None:
        raise ConfigError("scenario needs either 'polytope' or 'generator' (field 'scenario.polytope')")
    kind = gen.get("type")
    if kind == "box":
        return box(gen["lo"], gen["hi"])
    if kind == "regular_polygon":
        return regular_polygon(int(gen["n"]), float(gen.get("inradius", 1.0)), float(gen.get("phase", 0.0)))
    if kind == "simplex":
        return regular_simplex(int(block["d"]), float(gen.get("inradius", 1.0)))
    raise ConfigError(f"unknown polytope generator {kind!r} (field 'scenario.generator.type')")


@dataclass
class ExperimentConfig:
    raw: dict
    truth: Polytope
    topology: NetworkTopology
    L: float
    gamma: float
    sigma_zeta: float

    @property
    def mode(self) -> str:
        return self.raw["mode"]

    @property
    def scenario(self) -> dict:
        return self.raw["scenario"]

    @property
    def estimation(self) -> dict:
        return self.raw["estimation"]

    @property
    def schedule(self) -> dict:
        return self.raw["schedule"]

    @property
    def projection(self) -> dict:
        return self.raw["projection"]

    @property
    def baseline(self) -> np.ndarray:
        return np.asarray(self.scenario["baseline"], dtype=float)

    @property
    def seeds(self) -> list[int]:
        return [int(s) for s in self.raw["seeds"]]

    @property
    def m(self) -> int:
        return int(self.scenario["m"])

    @property
    def T(self) -> int:
        return int(self.scenario["T"])

    def with_overrides(self, **changes) -> "ExperimentConfig":
        """Re-validated copy with dotted-path replacements, e.g. ``{'scenario.T': 4000}``."""
        raw = copy.deepcopy(self.raw)
        for dotted, value in changes.items():
            keys = dotted.split(".")
            cur = raw
            for k in keys[:-1]:
                cur = cur.setdefault(k, {})
            cur[keys[-1]] = value
        return validate_config(raw)

    def canonical_json(self) -> str:
        return json.dumps(self.raw, sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()


def validate_config(given: dict) -> ExperimentConfig:
    """Fill defaults and check every field; errors name the offending field."""
    if not isinstance(given, dict):
        raise ConfigError("config must be a JSON object")
    for dotted in REQUIRED:
        try:
            _get(given, dotted)
        except KeyError:
            raise ConfigError(f"missing required field '{dotted}'") from None
    if given["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {given['schema_version']!r} (field 'schema_version')")
    raw = _merge(DEFAULTS, given)
    if raw["mode"] not in ("convex", "nonconvex"):
        raise ConfigError(f"mode must be 'convex' or 'nonconvex' (field 'mode'), got {raw['mode']!r}")
    sc, est = raw["scenario"], raw["estimation"]
    d, m, T = int(sc["d"]), int(sc["m"]), int(sc["T"])
    if d < 1 or m < 1 or T < 2:
        raise ConfigError("scenario.d and scenario.m must be >= 1 and scenario.T >= 2 (field 'scenario.T')")
    try:
        truth = _truth_from(sc)
    except ConfigError:
        raise
    except (SafeDOGDError, KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"invalid scenario polytope: {exc} (field 'scenario.generator')") from exc
    try:
        topology = topology_from_config(raw["topology"])
    except (SafeDOGDError, KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"invalid topology: {exc} (field 'topology')") from exc
    if truth.d != d:
        raise ConfigError(f"polytope dimension {truth.d} != scenario.d {d} (field 'scenario.d')")
    if topology.m != m:
        raise ConfigError(f"topology has {topology.m} agents but scenario.m is {m} (field 'topology.m')")
    if not is_bounded(truth):
        raise ConfigError("feasible polytope must be bounded (field 'scenario.polytope')")
    xs = np.asarray(sc["baseline"], dtype=float)
    if xs.shape != (d,):
        raise ConfigError(f"baseline must have {d} entries (field 'scenario.baseline')")
    gap = truth.b - truth.A @ xs
    if np.min(gap) <= 0:
        raise ConfigError("baseline must be strictly feasible (field 'scenario.baseline')")
    if raw["mode"] == "nonconvex":
        gen = sc.get("generator", {})
        if gen.get("type") != "box":
            raise ConfigError("nonconvex mode needs a box generator (field 'scenario.generator.type')")
        if sc["mirror"] == "entropy" and np.any(np.asarray(gen["lo"], dtype=float) <= 0):
            raise ConfigError("nonconvex box must lie in the positive orthant (field 'scenario.generator.lo')")
    if sc["mirror"] not in ("entropy", "identity"):
        raise ConfigError("scenario.mirror must be 'entropy' or 'identity' (field 'scenario.mirror')")
    for key in ("lambda", "R"):
        if not float(est[key]) >= (0.0 if key == "R" else 1e-300):
            raise ConfigError(f"estimation.{key} out of range (field 'estimation.{key}')")
    if not 0.0 < float(est["delta"]) < 1.0:
        raise ConfigError("estimation.delta must lie in (0, 1) (field 'estimation.delta')")
    if not float(est["rho"]) > 0:
        raise ConfigError("estimation.rho must be > 0 (field 'estimation.rho')")
    if est["projection_mode"] not in MODES:
        raise ConfigError(f"projection_mode must be one of {MODES} (field 'estimation.projection_mode')")
    if est["noise"] not in ("gaussian", "uniform"):
        raise ConfigError("estimation.noise must be 'gaussian' or 'uniform' (field 'estimation.noise')")

    L = norm_bound(truth)
    L_A = truth.row_norm_bound
    delta_s = float(np.min(gap))
    g_max = gamma_max(delta_s, L, L_A)
    g_safe = min(g_max, offset_aware_gamma(truth, xs, L))
    gamma = g_safe if est["gamma"] is None else float(est["gamma"])
    if gamma > g_max * (1 + 1e-12):
        raise ConfigError(f"gamma {gamma} exceeds safety_gap/(L L_A) = {g_max} (field 'estimation.gamma')")
    if gamma > g_safe * (1 + 1e-12):
        raise ConfigError(f"gamma {gamma} would let exploration leave the safe set (field 'estimation.gamma')")
    if not gamma > 0:
        raise ConfigError("estimation.gamma must be > 0 (field 'estimation.gamma')")
    sigma = L / math.sqrt(d) if est["sigma_zeta"] is None else float(est["sigma_zeta"])
    if not 0 < sigma <= L / math.sqrt(d) * (1 + 1e-12):
        raise ConfigError("sigma_zeta must lie in (0, L/sqrt(d)] (field 'estimation.sigma_zeta')")
    sch = raw["schedule"]
    for key in ("c_eta", "c0"):
        if not float(sch[key]) > 0:
            raise ConfigError(f"schedule.{key} must be > 0 (field 'schedule.{key}')")
    if not float(raw["projection"]["tol"]) > 0:
        raise ConfigError("projection.tol must be > 0 (field 'projection.tol')")
    if not raw["seeds"]:
        raise ConfigError("at least one seed is required (field 'seeds')")
    return ExperimentConfig(raw, truth, topology, L, gamma, sigma)


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        given = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return validate_config(given)
