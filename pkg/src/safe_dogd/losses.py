"""Time-varying quadratic loss families, mirror maps, hindsight minimizers
and path length.

Rounds are stored 0-based: ``targets[t]`` belongs to round ``t + 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DomainNotPositive, DomainViolation, NoConvergence, TargetsOutsideSafeSet
from .geometry import Polytope, project_polytope, vertices

CONVEX = "convex-tracking"
NONCONVEX = "nonconvex-reparameterized"


# ---------------------------------------------------------------------------
# mirror maps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MirrorMap:
    """Coordinatewise reparameterization q with a separable potential φ."""

    name: str

    @property
    def is_identity(self) -> bool:
        return self.name == "identity"

    def q(self, x):
        x = np.asarray(x, dtype=float)
        return x.copy() if self.is_identity else 0.25 * x * x

    def q_inverse(self, u):
        u = np.asarray(u, dtype=float)
        if self.is_identity:
            return u.copy()
        if np.any(u < 0):
            raise DomainViolation("q^{-1} needs u >= 0")
        return 2.0 * np.sqrt(u)

    def jacobian_diag(self, x):
        x = np.asarray(x, dtype=float)
        return np.ones_like(x) if self.is_identity else 0.5 * x

    def check_domain(self, u):
        if not self.is_identity and np.any(np.asarray(u) <= 0):
            raise DomainViolation("negative entropy is defined on the open positive orthant")

    def phi(self, u) -> float:
        u = np.asarray(u, dtype=float)
        self.check_domain(u)
        if self.is_identity:
            return 0.5 * float(u @ u)
        return float(np.sum(u * np.log(u) - u))

    def grad_phi(self, u):
        u = np.asarray(u, dtype=float)
        self.check_domain(u)
        return u.copy() if self.is_identity else np.log(u)

    def hess_phi_diag(self, u):
        u = np.asarray(u, dtype=float)
        self.check_domain(u)
        return np.ones_like(u) if self.is_identity else 1.0 / u


ENTROPY = MirrorMap("entropy")
IDENTITY = MirrorMap("identity")


def mirror_by_name(name: str) -> MirrorMap:
    if name not in ("entropy", "identity"):
        raise ValueError(f"unknown mirror map {name!r}")
    return MirrorMap(name)


def bregman(mirror: MirrorMap, u, z) -> float:
    """D_φ(u, z) = φ(u) - φ(z) - ∇φ(z)ᵀ(u - z)."""
    u = np.asarray(u, dtype=float)
    z = np.asarray(z, dtype=float)
    if mirror.is_identity:
        return 0.5 * float(np.sum((u - z) ** 2))
    mirror.check_domain(u)
    mirror.check_domain(z)
    # written termwise so that D(u, u) is exactly zero
    return float(np.sum(u * np.log(u / z) - u + z))


# ---------------------------------------------------------------------------
# loss sequences
# ---------------------------------------------------------------------------


@dataclass
class LossSequence:
    """Quadratic per-agent losses f_{i,t}(x) = ½||q(x) - target_{i,t}||².

    For the convex kind q is the identity and the targets are θ_{i,t}; for the
    non-convex kind the targets ψ_{i,t} live in mirror space.
    """

    kind: str
    targets: np.ndarray  # (T, m, d)
    mirror: MirrorMap
    G: float
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None
    G_F: float = float("nan")
    W: float = float("nan")
    D_prime: float = float("nan")
    drift: str = "none"

    def __post_init__(self):
        self.targets = np.asarray(self.targets, dtype=float)
        self.mean_targets = self.targets.mean(axis=1)
        dev = self.targets - self.mean_targets[:, None, :]
        self.spread = 0.5 * np.sum(dev * dev, axis=(1, 2))

    @property
    def T(self) -> int:
        return self.targets.shape[0]

    @property
    def m(self) -> int:
        return self.targets.shape[1]

    @property
    def d(self) -> int:
        return self.targets.shape[2]

    @property
    def grad_kind(self) -> int:
        return kernels.GRAD_TRACKING if self.mirror.is_identity else kernels.GRAD_QUADRATIC_REPARAM

    def local_loss(self, i: int, t: int, x) -> float:
        r = self.mirror.q(x) - self.targets[t, i]
        return 0.5 * float(r @ r)

    def gradient(self, i: int, t: int, x) -> np.ndarray:
        """Chain rule J_qᵀ ∇f̃(q(x))."""
        x = np.asarray(x, dtype=float)
        return self.mirror.jacobian_diag(x) * (self.mirror.q(x) - self.targets[t, i])

    def convex_loss(self, i: int, t: int, u) -> float:
        r = np.asarray(u, dtype=float) - self.targets[t, i]
        return 0.5 * float(r @ r)

    def convex_gradient(self, i: int, t: int, u) -> np.ndarray:
        return np.asarray(u, dtype=float) - self.targets[t, i]

    def global_loss(self, t: int, x) -> float:
        """Σ_i f_{i,t}(x) through (m/2)||q(x) - mean||² + spread."""
        r = self.mirror.q(x) - self.mean_targets[t]
        return 0.5 * self.m * float(r @ r) + float(self.spread[t])

    def global_losses(self, X) -> np.ndarray:
        """Global loss of actions X with shape (T, d) or (T, k, d), one per round."""
        X = np.asarray(X, dtype=float)
        U = self.mirror.q(X)
        if X.ndim == 2:
            r = U - self.mean_targets
            return 0.5 * self.m * np.sum(r * r, axis=1) + self.spread
        r = U - self.mean_targets[:, None, :]
        return 0.5 * self.m * np.sum(r * r, axis=2) + self.spread[:, None]

    def local_losses(self, X) -> np.ndarray:
        """f_{i,t}(x_{i,t}) for X with shape (T, m, d)."""
        r = self.mirror.q(np.asarray(X, dtype=float)) - self.targets
        return 0.5 * np.sum(r * r, axis=2)

    def window(self, start: int, stop: int) -> np.ndarray:
        return self.targets[start:stop]


def _zero_sum_offsets(rng: np.random.Generator, m: int, d: int, spread: float) -> np.ndarray:
    if m == 1 or spread == 0.0:
        return np.zeros((m, d))
    o = rng.standard_normal((m, d))
    o -= o.mean(axis=0)
    o *= spread / np.max(np.linalg.norm(o, axis=1))
    return o


def _random_direction(rng: np.random.Generator, d: int) -> np.ndarray:
    v = rng.standard_normal(d)
    return v / np.linalg.norm(v)


def _mean_path(T: int, center: np.ndarray, drift: dict, rng: np.random.Generator, inside) -> np.ndarray:
    """Mean-target path for the drift config; ``inside`` is the admissibility test."""
    kind = drift.get("type", "none")
    d = center.size
    path = np.empty((T, d))
    if kind == "none":
        path[:] = center
    elif kind == "random_walk":
        s = float(drift["step"])
        cur = center.copy()
        for t in range(T):
            if t > 0 and s > 0:
                # exact step length; moves that would leave the admissible set are redrawn
                for _ in range(100):
                    cand = cur + s * _random_direction(rng, d)
                    if inside(cand):
                        cur = cand
                        break
            path[t] = cur
    elif kind == "switching":
        every = int(drift["switch_every"])
        offset = np.asarray(drift.get("offset", np.eye(d)[0] * float(drift.get("amplitude", 0.5))))
        if every < 1:
            raise ValueError("switch_every must be >= 1")
        sign = np.where((np.arange(T) // every) % 2 == 0, 1.0, -1.0)
        path[:] = center + 0.5 * sign[:, None] * offset
    else:
        raise ValueError(f"unknown drift type {kind!r}")
    return path


def _inner_box(poly: Polytope, margin: float):
    tight = Polytope(poly.A, poly.b - margin)
    return lambda x: bool(np.all(tight.A @ x <= tight.b))


def make_convex_tracking(truth: Polytope, m: int, T: int, drift: dict, rng: np.random.Generator,
                         center=None, spread: float = 0.2, margin: float = 0.0) -> LossSequence:
    """Tracking losses ½||x - θ_{i,t}||² with zero-sum per-agent offsets.

    The mean target path is kept inside the true set shrunk by ``margin``, so
    the global minimizer is the mean target whenever it is admissible.
    """
    d = truth.d
    center = np.zeros(d) if center is None else np.asarray(center, dtype=float)
    inside = _inner_box(truth, margin)
    if not inside(center):
        raise TargetsOutsideSafeSet("target center lies outside the shrunk safe set")
    mean = _mean_path(T, center, drift, rng, inside)
    bad = np.flatnonzero(np.any(mean @ truth.A.T > truth.b - margin + 1e-12, axis=1))
    if bad.size:
        raise TargetsOutsideSafeSet(f"mean target leaves the shrunk safe set at round {bad[0] + 1}")
    offsets = _zero_sum_offsets(rng, m, d, spread)
    targets = mean[:, None, :] + offsets[None, :, :]
    V = vertices(truth)
    # max over the polytope of ||x - θ|| is attained at a vertex
    uniq = np.unique(targets.reshape(-1, d), axis=0)
    G = float(np.sqrt(np.max(np.sum((V[None, :, :] - uniq[:, None, :]) ** 2, axis=2))))
    return LossSequence(CONVEX, targets, IDENTITY, G, drift=drift.get("type", "none"))


def coordinate_gradient_bound(lo, hi, psi) -> np.ndarray:
    """max over x_j in [lo_j, hi_j] of |½ x_j (x_j²/4 - ψ_j)|, coordinatewise.

    The cubic's extremes sit at the endpoints or where x² = 4ψ/3.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    psi = np.asarray(psi, dtype=float)

    def g(x):
        return np.abs(0.5 * x * (0.25 * x * x - psi))

    best = np.maximum(g(lo), g(hi))
    crit = 2.0 * np.sqrt(np.maximum(psi, 0.0) / 3.0)
    for c in (crit, -crit):
        ok = (c >= lo) & (c <= hi)
        best = np.where(ok, np.maximum(best, g(c)), best)
    return best


def reparam_gradient_bound(targets, lo, hi) -> float:
    """Exact max over the box and all (i, t) of ||∇f_{i,t}(x)|| for the x²/4 family."""
    T = np.asarray(targets, dtype=float).reshape(-1, np.size(lo))
    uniq = np.unique(T, axis=0)
    per = coordinate_gradient_bound(lo, hi, uniq)
    return float(np.sqrt(np.max(np.sum(per * per, axis=1))))


def box_vertex_distance(lo, hi, P) -> float:
    """max over box corners v and rows p of ||v - p|| (coordinatewise farthest end)."""
    far = np.maximum(np.abs(P - lo), np.abs(P - hi))
    return float(np.sqrt(np.max(np.sum(far * far, axis=1))))


def entropy_bregman_diameter(lo_u, hi_u) -> float:
    """max of D_φ(u, z) over u, z in the box [lo_u, hi_u] (endpoints suffice)."""
    total = 0.0
    for a, b in zip(lo_u, hi_u):
        total += max(b * math.log(b / a) - b + a, a * math.log(a / b) - a + b)
    return total


def make_nonconvex_family(lo, hi, m: int, T: int, drift: dict, rng: np.random.Generator,
                          center=None, spread: float = 0.1, margin: float = 0.0,
                          mirror: MirrorMap = ENTROPY) -> LossSequence:
    """Losses ½||q(x) - ψ_{i,t}||² over the box [lo, hi] in the positive orthant.

    ``center``, ``spread`` and drift steps are in mirror space. The mean target
    stays inside q of the box shrunk by ``margin``.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if mirror.name == "entropy" and np.any(lo <= 0):
        raise DomainNotPositive("non-convex box must lie in the open positive orthant")
    if np.any(hi - lo <= 2 * margin):
        raise TargetsOutsideSafeSet("margin leaves no room inside the box")
    d = lo.size
    ulo, uhi = mirror.q(lo + margin), mirror.q(hi - margin)
    center = 0.5 * (ulo + uhi) if center is None else np.asarray(center, dtype=float)

    def inside(u):
        return bool(np.all(u >= ulo) and np.all(u <= uhi))

    if not inside(center):
        raise TargetsOutsideSafeSet("target center lies outside q(shrunk box)")
    mean = _mean_path(T, center, drift, rng, inside)
    bad = np.flatnonzero(np.any((mean < ulo - 1e-12) | (mean > uhi + 1e-12), axis=1))
    if bad.size:
        raise TargetsOutsideSafeSet(f"mean target leaves q(shrunk box) at round {bad[0] + 1}")
    offsets = _zero_sum_offsets(rng, m, d, spread)
    targets = mean[:, None, :] + offsets[None, :, :]
    if mirror.is_identity:
        uniq = np.unique(targets.reshape(-1, d), axis=0)
        G = box_vertex_distance(lo, hi, uniq)
    else:
        G = reparam_gradient_bound(targets, lo, hi)
    qlo, qhi = mirror.q(lo), mirror.q(hi)
    G_F = box_vertex_distance(qlo, qhi, np.unique(targets.reshape(-1, d), axis=0))
    W = float(np.max(mirror.jacobian_diag(hi)))
    D_prime = entropy_bregman_diameter(qlo, qhi) if not mirror.is_identity else 0.5 * float(
        np.sum((qhi - qlo) ** 2))
    return LossSequence(NONCONVEX, targets, mirror, G, lo, hi, G_F, W, D_prime, drift.get("type", "none"))


# ---------------------------------------------------------------------------
# hindsight minimizers and path length
# ---------------------------------------------------------------------------


@dataclass
class MinimizerTrace:
    x_star: np.ndarray  # (T, d)

    @property
    def T(self) -> int:
        return self.x_star.shape[0]

    def steps(self) -> np.ndarray:
        return np.linalg.norm(np.diff(self.x_star, axis=0), axis=1)

    def cumulative(self) -> np.ndarray:
        """C_t* for t = 1..T (zero at t = 1)."""
        return np.concatenate(([0.0], np.cumsum(self.steps())))

    @property
    def path_length(self) -> float:
        return path_length(self)


def path_length(trace: MinimizerTrace) -> float:
    """Σ_{t>=2} ||x*_t - x*_{t-1}||."""
    if trace.T < 1:
        raise ValueError("trace must hold at least one round")
    return math.fsum(trace.steps())


def _pgd_minimizer(mean: np.ndarray, m: int, truth: Polytope, tol: float, max_iter: int = 1000):
    """Projected gradient on (m/2)||x - mean||² with step 1/m from the mean."""
    x = project_polytope(truth, mean, tol=min(tol, 1e-9) * 1e-2)
    for _ in range(max_iter):
        g = m * (x - mean)
        nxt = project_polytope(truth, x - g / m, tol=min(tol, 1e-9) * 1e-2)
        if np.linalg.norm(x - nxt) * m <= tol:
            return nxt
        x = nxt
    raise NoConvergence("hindsight projected gradient did not reach the tolerance")


def hindsight_minimizer(seq: LossSequence, t: int, truth: Polytope, tol: float = 1e-9) -> np.ndarray:
    """argmin over the true set of Σ_i f_{i,t} (``t`` is 0-based)."""
    mean = seq.mean_targets[t]
    if seq.kind == CONVEX:
        return _pgd_minimizer(mean, seq.m, truth, tol)
    u = np.clip(mean, seq.mirror.q(seq.lo), seq.mirror.q(seq.hi))
    return seq.mirror.q_inverse(u)


def minimizer_trace(seq: LossSequence, truth: Polytope, tol: float = 1e-9) -> MinimizerTrace:
    """Hindsight minimizers for every round, reusing the answer while the mean is unchanged."""
    if seq.kind == NONCONVEX:
        u = np.clip(seq.mean_targets, seq.mirror.q(seq.lo), seq.mirror.q(seq.hi))
        return MinimizerTrace(seq.mirror.q_inverse(u))
    out = np.empty((seq.T, seq.d))
    last_mean = None
    for t in range(seq.T):
        mean = seq.mean_targets[t]
        if last_mean is None or not np.array_equal(mean, last_mean):
            x = hindsight_minimizer(seq, t, truth, tol)
            last_mean = mean
        out[t] = x
    return MinimizerTrace(out)


def sample_gradient_norms(seq: LossSequence, points: np.ndarray, rounds: np.ndarray) -> np.ndarray:
    """||∇f_{i,t}(x)|| for each sampled point against every agent at the given rounds."""
    X = np.asarray(points, dtype=float)[:, None, None, :]
    psi = seq.targets[rounds][None, :, :, :]
    g = seq.mirror.jacobian_diag(X) * (seq.mirror.q(X) - psi)
    return np.linalg.norm(g, axis=-1)
