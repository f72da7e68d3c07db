"""Regret, the regret decomposition, safety audits and exponent fits."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import scalar_regret
from safe_dogd.errors import HorizonMismatch
from safe_dogd.geometry import project_polytope, regular_polygon, shrink_polytope
from safe_dogd.losses import make_convex_tracking, minimizer_trace
from safe_dogd.metrics import compute_regret, fit_exponent, safety_audit


@pytest.fixture
def tracking(rng):
    hexagon = regular_polygon(6, 1.0)
    drift = {"type": "switching", "switch_every": 7, "offset": [0.5, 0.3]}
    seq = make_convex_tracking(hexagon, 3, 50, drift, rng, center=[0.2, 0.1], spread=0.2)
    return hexagon, seq, minimizer_trace(seq, hexagon)


class TestSafetyAudit:
    def test_counts(self, hexagon):
        X = np.array([[[0.0, 0.0], [1.2, 0.0]], [[0.5, 0.5], [0.0, 0.0]]])
        audit = safety_audit(X, hexagon)
        assert audit.violations == 1
        assert audit.worst_slack == pytest.approx(-0.2)

    def test_tolerance(self, hexagon):
        assert safety_audit(np.array([[1.0 + 1e-10, 0.0]]), hexagon).violations == 0

    def test_empty(self, hexagon):
        assert safety_audit(np.empty((0, 2)), hexagon).violations == 0


class TestRegret:
    def test_matches_hand_loop(self, tracking, rng):
        hexagon, seq, trace = tracking
        X = rng.uniform(-0.5, 0.5, (seq.T, seq.m, 2))
        rep = compute_regret(X, trace, seq, 10, hexagon)
        for j in range(seq.m):
            ref = scalar_regret(X[:, j], trace.x_star,
                                lambda t, x: sum(seq.local_loss(i, t, x) for i in range(seq.m)))
            assert rep.per_agent[j] == pytest.approx(ref, rel=1e-11, abs=1e-11)
        assert rep.violation_count == 0
        assert rep.path_length == pytest.approx(trace.path_length)

    def test_nonnegative_at_feasible_points(self, tracking, rng):
        hexagon, seq, trace = tracking
        X = np.stack([trace.x_star] * seq.m, axis=1) + 0.01 * rng.standard_normal((seq.T, seq.m, 2))
        X = np.array([[project_polytope(hexagon, x) for x in row] for row in X])
        rep = compute_regret(X, trace, seq, 1, hexagon)
        assert np.all(rep.per_agent >= -1e-9)

    @given(st.integers(min_value=1, max_value=50), st.integers(min_value=0, max_value=2**31 - 1))
    @settings(max_examples=30, deadline=None)
    def test_decomposition_identity(self, Ts, seed):
        rng = np.random.default_rng(seed)
        hexagon = regular_polygon(6, 1.0)
        seq = make_convex_tracking(hexagon, 3, 50, {"type": "random_walk", "step": 0.01}, rng, spread=0.2,
                                   margin=0.2)
        trace = minimizer_trace(seq, hexagon)
        shrunk = shrink_polytope(hexagon, 0.3)
        tilde = np.array([project_polytope(shrunk, x, tol=1e-12) for x in trace.x_star])
        X = rng.uniform(-0.5, 0.5, (50, 3, 2))
        rep = compute_regret(X, trace, seq, Ts, hexagon, tilde)
        assert rep.decomposition_gap() <= 1e-8
        assert np.all(rep.term_III >= -1e-12)

    def test_without_comparator(self, tracking, rng):
        hexagon, seq, trace = tracking
        rep = compute_regret(rng.uniform(-0.5, 0.5, (seq.T, seq.m, 2)), trace, seq, 5)
        assert np.isnan(rep.decomposition_gap())
        assert "term_I" not in rep.to_dict()

    def test_horizon_mismatch(self, tracking):
        hexagon, seq, trace = tracking
        with pytest.raises(HorizonMismatch):
            compute_regret(np.zeros((seq.T - 1, seq.m, 2)), trace, seq, 5)

    def test_to_dict(self, tracking, rng):
        hexagon, seq, trace = tracking
        rep = compute_regret(rng.uniform(-0.5, 0.5, (seq.T, seq.m, 2)), trace, seq, 5, hexagon, trace.x_star)
        d = rep.to_dict()
        assert len(d["regret"]) == seq.m and d["Ts"] == 5 and len(d["term_II"]) == seq.m


class TestExponentFit:
    def test_exact_power_law(self):
        x = np.array([2000, 4000, 8000, 16000, 32000])
        fit = fit_exponent(x, 3.0 * x ** (2 / 3))
        assert fit.slope == pytest.approx(2 / 3, abs=1e-12)
        assert fit.r_squared == pytest.approx(1.0)
        assert fit.ci_low <= fit.slope <= fit.ci_high

    def test_noisy_interval_covers(self, rng):
        x = np.geomspace(100, 1e5, 12)
        y = x**0.7 * np.exp(0.05 * rng.standard_normal(12))
        fit = fit_exponent(x, y)
        assert fit.ci_low < 0.7 < fit.ci_high

    def test_needs_three_points(self):
        with pytest.raises(ValueError):
            fit_exponent([1, 2], [1, 2])
