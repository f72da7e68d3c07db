"""Mirror maps, loss families, hindsight minimizers and path length."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import golden
from oracles import active_set_projection, central_difference
from safe_dogd.errors import DomainNotPositive, DomainViolation, TargetsOutsideSafeSet
from safe_dogd.geometry import regular_polygon
from safe_dogd.losses import (
    CONVEX,
    ENTROPY,
    IDENTITY,
    LossSequence,
    MinimizerTrace,
    bregman,
    coordinate_gradient_bound,
    entropy_bregman_diameter,
    hindsight_minimizer,
    make_convex_tracking,
    make_nonconvex_family,
    minimizer_trace,
    mirror_by_name,
    path_length,
    reparam_gradient_bound,
    sample_gradient_norms,
)

positive = st.floats(min_value=0.05, max_value=5.0)


class TestMirrorMap:
    def test_by_name(self):
        assert mirror_by_name("entropy") == ENTROPY
        with pytest.raises(ValueError):
            mirror_by_name("tsallis")

    @given(st.lists(positive, min_size=1, max_size=5))
    def test_q_roundtrip(self, xs):
        x = np.array(xs)
        assert np.allclose(ENTROPY.q_inverse(ENTROPY.q(x)), x, rtol=1e-12)
        assert np.array_equal(IDENTITY.q(x), x)

    def test_q_inverse_domain(self):
        with pytest.raises(DomainViolation):
            ENTROPY.q_inverse([-0.1])

    def test_jacobian(self):
        x = np.array([0.7, 1.3])
        for j in range(2):
            e = np.eye(2)[j]
            fd = central_difference(ENTROPY.q, x, e)
            assert fd[j] == pytest.approx(ENTROPY.jacobian_diag(x)[j], rel=1e-8)

    def test_phi_derivatives(self):
        u = np.array([0.4, 1.7])
        for j in range(2):
            e = np.eye(2)[j]
            assert central_difference(ENTROPY.phi, u, e) == pytest.approx(ENTROPY.grad_phi(u)[j], rel=1e-7)
            fd2 = central_difference(lambda v: ENTROPY.grad_phi(v)[j], u, e, h=1e-5)
            assert fd2 == pytest.approx(ENTROPY.hess_phi_diag(u)[j], rel=1e-6)

    def test_entropy_domain(self):
        with pytest.raises(DomainViolation):
            ENTROPY.phi([0.0, 1.0])


class TestBregman:
    def test_golden(self):
        assert bregman(ENTROPY, golden.BREGMAN_U, golden.BREGMAN_Z) == pytest.approx(golden.BREGMAN_VALUE,
                                                                                     rel=1e-14)

    def test_identity(self):
        assert bregman(IDENTITY, [1.0, 2.0], [2.0, 0.0]) == 2.5

    @given(st.lists(positive, min_size=3, max_size=3), st.lists(positive, min_size=3, max_size=3))
    def test_nonnegative_and_definition(self, u, z):
        u, z = np.array(u), np.array(z)
        val = bregman(ENTROPY, u, z)
        assert val >= -1e-14
        by_def = ENTROPY.phi(u) - ENTROPY.phi(z) - ENTROPY.grad_phi(z) @ (u - z)
        assert val == pytest.approx(by_def, abs=1e-10)
        assert bregman(ENTROPY, u, u) == 0.0

    def test_diameter_by_grid(self):
        lo, hi = np.array([0.1, 0.3]), np.array([0.6, 0.9])
        g = [np.linspace(lo[j], hi[j], 201) for j in range(2)]
        best = 0.0
        for j in range(2):
            U, Z = np.meshgrid(g[j], g[j])
            best += np.max(U * np.log(U / Z) - U + Z)
        assert entropy_bregman_diameter(lo, hi) == pytest.approx(best, rel=1e-12)


class TestLossSequence:
    def _seq(self, mirror, rng):
        return LossSequence(CONVEX, rng.uniform(0.2, 1.0, (3, 4, 2)), mirror, 1.0)

    @pytest.mark.parametrize("mirror", [IDENTITY, ENTROPY])
    def test_gradient_finite_difference(self, mirror, rng):
        seq = self._seq(mirror, rng)
        x = np.array([0.8, 1.1])
        for j in range(2):
            e = np.eye(2)[j]
            fd = central_difference(lambda v: seq.local_loss(2, 1, v), x, e)
            assert seq.gradient(2, 1, x)[j] == pytest.approx(fd, rel=1e-7)

    @pytest.mark.parametrize("mirror", [IDENTITY, ENTROPY])
    def test_global_loss_is_sum_of_local(self, mirror, rng):
        seq = self._seq(mirror, rng)
        x = np.array([0.8, 1.1])
        for t in range(3):
            direct = math.fsum(seq.local_loss(i, t, x) for i in range(4))
            assert seq.global_loss(t, x) == pytest.approx(direct, rel=1e-13)

    def test_vectorized_losses(self, rng):
        seq = self._seq(ENTROPY, rng)
        X = rng.uniform(0.5, 1.5, (3, 4, 2))
        G = seq.global_losses(X)
        assert G.shape == (3, 4)
        assert G[1, 2] == pytest.approx(seq.global_loss(1, X[1, 2]), rel=1e-14)
        assert seq.global_losses(X[:, 0]).shape == (3,)
        L = seq.local_losses(X)
        assert L[2, 3] == pytest.approx(seq.local_loss(3, 2, X[2, 3]), rel=1e-14)

    def test_convex_surrogate(self, rng):
        seq = self._seq(ENTROPY, rng)
        u = np.array([0.3, 0.4])
        assert np.allclose(seq.convex_gradient(0, 0, u), u - seq.targets[0, 0])
        assert seq.convex_loss(0, 0, u) == pytest.approx(0.5 * np.sum((u - seq.targets[0, 0]) ** 2))


class TestConvexTracking:
    def test_offsets_and_bound(self, hexagon, rng):
        seq = make_convex_tracking(hexagon, 5, 50, {"type": "none"}, rng, center=[0.2, 0.1], spread=0.3)
        off = seq.targets[0] - seq.mean_targets[0]
        assert np.allclose(off.sum(axis=0), 0.0, atol=1e-14)
        assert np.max(np.linalg.norm(off, axis=1)) == pytest.approx(0.3)
        pts = rng.uniform(-1, 1, (500, 2))
        pts = pts[np.all(pts @ hexagon.A.T <= hexagon.b, axis=1)]
        norms = sample_gradient_norms(seq, pts, np.arange(0, 50, 7))
        assert np.max(norms) <= seq.G + 1e-12

    def test_center_outside(self, hexagon, rng):
        with pytest.raises(TargetsOutsideSafeSet):
            make_convex_tracking(hexagon, 3, 10, {"type": "none"}, rng, center=[0.9, 0.0], margin=0.2)

    def test_random_walk_path_length(self, hexagon, rng):
        seq = make_convex_tracking(hexagon, 3, 400, {"type": "random_walk", "step": 0.001}, rng, spread=0.1,
                                   margin=0.3)
        trace = minimizer_trace(seq, hexagon)
        # the mean stays interior, so the minimizer is the mean and moves by exactly the step
        assert path_length(trace) == pytest.approx(0.001 * 399, rel=1e-6)

    def test_switching_path_length(self, hexagon, rng):
        drift = {"type": "switching", "switch_every": 10, "offset": [0.4, 0.0]}
        seq = make_convex_tracking(hexagon, 3, 35, drift, rng, spread=0.1)
        assert path_length(minimizer_trace(seq, hexagon)) == pytest.approx(3 * 0.4, rel=1e-9)

    def test_unknown_drift(self, hexagon, rng):
        with pytest.raises(ValueError):
            make_convex_tracking(hexagon, 3, 10, {"type": "brownian"}, rng)


class TestNonconvexFamily:
    def test_positive_orthant(self, rng):
        with pytest.raises(DomainNotPositive):
            make_nonconvex_family([0.0, 0.5], [1.0, 1.5], 3, 10, {"type": "none"}, rng)

    def test_margin_too_wide(self, rng):
        with pytest.raises(TargetsOutsideSafeSet):
            make_nonconvex_family([0.5, 0.5], [1.0, 1.0], 3, 10, {"type": "none"}, rng, margin=0.3)

    def test_gradient_bound_dominates_samples(self, rng):
        seq = make_nonconvex_family([0.5, 0.5], [1.5, 1.5], 4, 80, {"type": "random_walk", "step": 1e-3}, rng,
                                    spread=0.05, margin=0.25)
        pts = rng.uniform(0.5, 1.5, (800, 2))
        corners = np.array([[0.5, 0.5], [0.5, 1.5], [1.5, 0.5], [1.5, 1.5]])
        norms = sample_gradient_norms(seq, np.vstack([pts, corners]), np.arange(80))
        assert np.max(norms) <= seq.G + 1e-12
        assert np.max(norms) >= 0.95 * seq.G

    @given(st.floats(min_value=0.01, max_value=1.0), st.floats(min_value=0.1, max_value=1.0),
           st.floats(min_value=0.1, max_value=1.5))
    @settings(max_examples=50)
    def test_coordinate_bound_by_grid(self, psi, lo, width):
        grid = np.linspace(lo, lo + width, 20001)
        ref = np.max(np.abs(0.5 * grid * (0.25 * grid**2 - psi)))
        got = coordinate_gradient_bound(np.array([lo]), np.array([lo + width]), np.array([psi]))[0]
        assert got >= ref - 1e-12
        assert got == pytest.approx(ref, rel=1e-6)

    def test_reparam_bound_shape(self):
        T = np.full((5, 3, 2), 0.25)
        assert reparam_gradient_bound(T, np.array([0.5, 0.5]), np.array([1.5, 1.5])) > 0


class TestMinimizers:
    def test_convex_minimizer_is_projection_of_mean(self, hexagon):
        targets = np.array([[[1.5, 0.2], [1.3, 0.4]]])
        seq = LossSequence(CONVEX, targets, IDENTITY, 1.0)
        x = hindsight_minimizer(seq, 0, hexagon, tol=1e-12)
        assert np.allclose(x, active_set_projection(hexagon.A, hexagon.b, targets[0].mean(axis=0)), atol=1e-9)

    def test_nonconvex_minimizer_by_grid(self, rng):
        seq = make_nonconvex_family([0.5, 0.5], [1.5, 1.5], 3, 1, {"type": "none"}, rng, center=[0.1, 0.5])
        x = minimizer_trace(seq, None).x_star[0]
        g = np.linspace(0.5, 1.5, 1001)
        X, Y = np.meshgrid(g, g, indexing="ij")
        pts = np.stack([X.ravel(), Y.ravel()], axis=1)
        vals = seq.global_losses(pts[None])[0]
        k = int(np.argmin(vals))
        assert np.allclose(x, pts[k], atol=2e-3)
        # the mean target lies inside q(box), so the minimizer is q^{-1}(mean) = 2 sqrt(mean)
        assert np.allclose(x, 2.0 * np.sqrt(seq.mean_targets[0]), rtol=1e-14)

    def test_trace_matches_per_round(self, rng):
        hexagon = regular_polygon(6, 1.0)
        drift = {"type": "switching", "switch_every": 3, "offset": [0.4, 0.2]}
        seq = make_convex_tracking(hexagon, 3, 12, drift, rng, spread=0.1)
        tr = minimizer_trace(seq, hexagon)
        for t in range(12):
            assert np.allclose(tr.x_star[t], hindsight_minimizer(seq, t, hexagon))

    def test_path_length(self):
        tr = MinimizerTrace(np.array([[0.0, 0.0], [3.0, 4.0], [3.0, 4.0], [0.0, 0.0]]))
        assert path_length(tr) == 10.0
        assert np.array_equal(tr.cumulative(), [0.0, 5.0, 5.0, 10.0])

    def test_empty_trace(self):
        with pytest.raises(ValueError):
            path_length(MinimizerTrace(np.empty((0, 2))))
