"""The numba and numpy kernel paths compute the same projections and runs."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import golden
from conftest import BACKENDS
from oracles import active_set_projection, reference_ogd
from safe_dogd import _backend, kernels
from safe_dogd.geometry import regular_polygon
from safe_dogd.network import named_topology

needs_numba = pytest.mark.skipif(not _backend.HAVE_NUMBA, reason="numba not installed")
seeds = st.integers(min_value=0, max_value=2**31 - 1)


def test_backend_name_reflects_flag():
    assert _backend.backend_name() in ("numba", "numpy")
    assert kernels.implementations("numpy") is kernels.NUMPY


class TestSingleBackend:
    def test_cone_golden(self, backend):
        x, st_ = kernels.project_cone(np.array(golden.CONE_A), golden.CONE_B, golden.CONE_R,
                                      np.array(golden.CONE_Z_OFF_AXIS), 1e-14, backend=backend)
        assert st_ == kernels.OK
        assert np.allclose(x, golden.CONE_X_OFF_AXIS, atol=1e-10)

    def test_polytope_matches_oracle(self, backend, hexagon):
        z = np.array([2.0, 1.5])
        x, it, res, st_ = kernels.dykstra_polytope(hexagon.A, hexagon.b, np.inf, z, 1e-12, 10_000, backend=backend)
        assert st_ == kernels.OK and it >= 1 and res <= 1e-12
        assert np.allclose(x, active_set_projection(hexagon.A, hexagon.b, z), atol=1e-9)

    def test_ball_constraint(self, backend):
        A = np.array([[1.0, 0.0]])
        x, _, _, st_ = kernels.dykstra_polytope(A, np.array([5.0]), 1.0, np.array([0.0, 3.0]), 1e-12, 10_000,
                                                backend=backend)
        assert st_ == kernels.OK
        assert np.allclose(x, [0.0, 1.0], atol=1e-10)

    def test_ogd_matches_single_agent_reference(self, backend, hexagon):
        """One agent, P = [1]: the loop is plain projected OGD."""
        rng = np.random.default_rng(5)
        T = 40
        targets = rng.uniform(-1.5, 1.5, (T, 1, 2))
        X, _, _, _, st_, _, _ = kernels.ogd_loop(
            np.zeros((1, 2)), targets, kernels.GRAD_TRACKING, np.ones((1, 1)), hexagon.A[None], hexagon.b[None],
            np.zeros(1), np.array([np.inf]), kernels.MODE_POLYTOPE, 0.3, 1e-13, 10_000, backend=backend)
        assert st_ == kernels.OK
        ref = reference_ogd(np.zeros(2), targets[:, 0, :], hexagon.A, hexagon.b, 0.3)
        assert np.allclose(X[:, 0, :], ref, atol=1e-9)


@needs_numba
class TestEquivalence:
    @given(seeds, st.integers(min_value=2, max_value=5))
    @settings(max_examples=40, deadline=None)
    def test_dykstra_polytope(self, seed, d):
        rng = np.random.default_rng(seed)
        A = rng.standard_normal((d + 3, d))
        b = rng.uniform(0.2, 1.0, d + 3)
        z = 3.0 * rng.standard_normal(d)
        out = [kernels.dykstra_polytope(A, b, 2.0, z, 1e-12, 20_000, backend=k) for k in BACKENDS]
        assert out[0][3] == out[1][3]
        assert np.allclose(out[0][0], out[1][0], atol=1e-12)
        assert out[0][1] == out[1][1]

    @given(seeds, st.integers(min_value=2, max_value=4))
    @settings(max_examples=40, deadline=None)
    def test_dykstra_cones(self, seed, d):
        rng = np.random.default_rng(seed)
        A = rng.standard_normal((d + 2, d))
        A /= np.linalg.norm(A, axis=1, keepdims=True)
        b = rng.uniform(0.5, 1.0, d + 2)
        z = 3.0 * rng.standard_normal(d)
        out = [kernels.dykstra_cones(A, b, 0.1, z, 1e-11, 20_000, backend=k) for k in BACKENDS]
        assert out[0][3] == out[1][3] == kernels.OK
        assert np.allclose(out[0][0], out[1][0], atol=1e-10)

    @given(seeds)
    @settings(max_examples=40, deadline=None)
    def test_single_cone(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.standard_normal(3)
        z = 3.0 * rng.standard_normal(3)
        r = rng.uniform(0.0, 0.5) * np.linalg.norm(a)
        out = [kernels.project_cone(a, 1.0, r, z, 1e-13, backend=k) for k in BACKENDS]
        assert out[0][1] == out[1][1]
        assert np.allclose(out[0][0], out[1][0], atol=1e-12)

    @pytest.mark.parametrize("mode", [kernels.MODE_POLYTOPE, kernels.MODE_CONE])
    @pytest.mark.parametrize("grad_kind", [kernels.GRAD_TRACKING, kernels.GRAD_QUADRATIC_REPARAM])
    def test_ogd_loop(self, mode, grad_kind):
        rng = np.random.default_rng(11)
        topo = named_topology("ring", 5)
        hexagon = regular_polygon(6, 1.0)
        m, T = 5, 200
        A_sets = np.stack([hexagon.A + 0.01 * rng.standard_normal(hexagon.A.shape) for _ in range(m)])
        b_sets = np.tile(hexagon.b, (m, 1))
        radii = np.full(m, 0.05 if mode == kernels.MODE_CONE else 0.0)
        balls = np.full(m, np.inf)
        targets = rng.uniform(-0.5, 0.5, (T, m, 2))
        x0 = np.zeros((m, 2))
        out = [kernels.ogd_loop(x0, targets, grad_kind, topo.P, A_sets, b_sets, radii, balls, mode, 0.05,
                                1e-12, 10_000, backend=k) for k in BACKENDS]
        assert out[0][4] == out[1][4] == kernels.OK
        assert np.allclose(out[0][0], out[1][0], atol=1e-10)
        assert np.array_equal(out[0][2], out[1][2])
