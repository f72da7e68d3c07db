"""Shared fixtures: kernel backends, topologies and small experiment configs."""

from __future__ import annotations

import copy

import numpy as np
import pytest

from safe_dogd import _backend
from safe_dogd.config import validate_config
from safe_dogd.geometry import box, regular_polygon
from safe_dogd.network import named_topology, validate_topology

BACKENDS = ["numpy"] + (["numba"] if _backend.HAVE_NUMBA else [])

CONVEX_RAW = {
    "schema_version": 1,
    "mode": "convex",
    "scenario": {
        "d": 2,
        "m": 4,
        "T": 2000,
        "generator": {"type": "regular_polygon", "n": 6, "inradius": 1.0},
        "baseline": [0.0, 0.0],
        "drift": {"type": "none"},
        "target_center": [0.3, 0.2],
        "target_spread": 0.2,
        "target_margin": 0.3,
    },
    "topology": {"generator": "ring", "m": 4},
    "schedule": {"c_eta": 1.0, "c0": 1.0},
    "estimation": {"lambda": 0.1, "delta": 0.05, "rho": 1.0, "R": 0.1, "projection_mode": "conservative"},
    "projection": {"tol": 1e-9, "max_iter": 10000},
    "seeds": [0],
}

NONCONVEX_RAW = {
    "schema_version": 1,
    "mode": "nonconvex",
    "scenario": {
        "d": 2,
        "m": 4,
        "T": 4000,
        "generator": {"type": "box", "lo": [0.5, 0.5], "hi": [1.5, 1.5]},
        "baseline": [1.0, 1.0],
        "drift": {"type": "random_walk", "step": 0.0005},
        "target_spread": 0.05,
        "target_margin": 0.25,
        "mirror": "entropy",
    },
    "topology": {"generator": "ring", "m": 4},
    "schedule": {"c_eta": 1.0, "c0": 1.0},
    "estimation": {"lambda": 0.01, "delta": 0.05, "rho": 1.0, "R": 0.05, "projection_mode": "conservative"},
    "seeds": [0],
}


def make_raw(kind: str = "convex", **overrides) -> dict:
    """Deep copy of a base config with dotted-path overrides applied."""
    raw = copy.deepcopy(CONVEX_RAW if kind == "convex" else NONCONVEX_RAW)
    for dotted, value in overrides.items():
        keys = dotted.split(".")
        cur = raw
        for k in keys[:-1]:
            cur = cur.setdefault(k, {})
        cur[keys[-1]] = value
    return raw


def make_config(kind: str = "convex", **overrides):
    return validate_config(make_raw(kind, **overrides))


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def ring3():
    return validate_topology([[0.5, 0.25, 0.25], [0.25, 0.5, 0.25], [0.25, 0.25, 0.5]])


@pytest.fixture
def ring4():
    return named_topology("ring", 4)


@pytest.fixture
def hexagon():
    return regular_polygon(6, 1.0)


@pytest.fixture
def unit_box():
    return box([0.5, 0.5], [1.5, 1.5])


@pytest.fixture(scope="session")
def convex_cfg():
    return make_config("convex")


@pytest.fixture(scope="session")
def nonconvex_cfg():
    return make_config("nonconvex")


def topology_family():
    """Named topologies exercised by the mixing tests."""
    fam = []
    for name in ("ring", "path", "star", "complete"):
        for m in (2, 3, 4, 5, 8, 16):
            fam.append((f"{name}-{m}", named_topology(name, m)))
    fam.append(("ring3-uniform", validate_topology([[0.5, 0.25, 0.25], [0.25, 0.5, 0.25], [0.25, 0.25, 0.5]])))
    return fam
