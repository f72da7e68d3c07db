"""Feasible sets and Euclidean projections onto them.

Polytopes ``{x : A x <= b}``, shrunk polytopes, and the robust safe sets built
from an estimated constraint matrix and a confidence radius. Robust sets come
in two flavours:

* ``exact_cone``: ``a_hat_k^T x + r ||x|| <= b_k`` for every row, i.e. the
  constraint holds for every row inside the radius-``r`` ball around
  ``a_hat_k``;
* ``conservative``: ``a_hat_k^T x <= b_k - r L`` intersected with the ball
  ``||x|| <= L``. The ball keeps it an inner approximation of the exact-cone
  set everywhere, not just on ``||x|| <= L``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from . import kernels
from .errors import (
    DimensionMismatch,
    EmptyShrunkSet,
    InfeasibleConstraintSet,
    MaxIterationsExceeded,
    NoConvergence,
    ZeroNormal,
)

DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 10_000

EXACT_CONE = "exact_cone"
CONSERVATIVE = "conservative"
MODES = (EXACT_CONE, CONSERVATIVE)


@dataclass(frozen=True)
class Polytope:
    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.asarray(self.b, dtype=float).reshape(-1)
        if A.shape[0] != b.shape[0]:
            raise DimensionMismatch(f"A has {A.shape[0]} rows but b has {b.shape[0]} entries")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def d(self) -> int:
        return self.A.shape[1]

    @property
    def row_norm_bound(self) -> float:
        """L_A = max_k ||a_k||."""
        return float(np.max(np.linalg.norm(self.A, axis=1)))

    def slack(self, x) -> np.ndarray:
        return self.b - self.A @ np.asarray(x, dtype=float)

    def to_dict(self) -> dict:
        return {"A": self.A.tolist(), "b": self.b.tolist()}

    @classmethod
    def from_dict(cls, block: dict) -> "Polytope":
        return cls(np.asarray(block["A"], dtype=float), np.asarray(block["b"], dtype=float))


@dataclass(frozen=True)
class RobustSafeSet:
    A_hat: np.ndarray
    b: np.ndarray
    radius: float
    mode: str = CONSERVATIVE
    L: float = np.inf

    def __post_init__(self):
        object.__setattr__(self, "A_hat", np.atleast_2d(np.asarray(self.A_hat, dtype=float)))
        object.__setattr__(self, "b", np.asarray(self.b, dtype=float).reshape(-1))
        if self.radius < 0:
            raise ValueError("radius must be >= 0")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == CONSERVATIVE and self.radius > 0 and not np.isfinite(self.L):
            raise ValueError("conservative mode needs a finite norm bound L")

    @property
    def d(self) -> int:
        return self.A_hat.shape[1]

    def tightened(self) -> Polytope:
        """Polytope part of the conservative set (offsets b_k - r L)."""
        shift = self.radius * self.L if self.radius > 0 else 0.0
        return Polytope(self.A_hat, self.b - shift)

    def ball(self) -> float:
        return float(self.L) if (self.mode == CONSERVATIVE and self.radius > 0) else np.inf

    def kernel_args(self):
        """(mode code, A, b, radius, ball) as consumed by the projection kernels."""
        if self.mode == EXACT_CONE:
            return kernels.MODE_CONE, self.A_hat, self.b, float(self.radius), np.inf
        tight = self.tightened()
        return kernels.MODE_POLYTOPE, tight.A, tight.b, 0.0, self.ball()

    def to_dict(self) -> dict:
        return {
            "A_hat": self.A_hat.tolist(),
            "b": self.b.tolist(),
            "radius": float(self.radius),
            "mode": self.mode,
            "L": float(self.L),
        }


def _check_dim(d: int, x: np.ndarray):
    if x.shape != (d,):
        raise DimensionMismatch(f"expected a {d}-vector, got shape {x.shape}")


def contains(s, x, tol: float = 0.0) -> bool:
    """True iff every constraint of ``s`` holds at ``x`` with slack >= -tol."""
    if tol < 0:
        raise ValueError("tol must be >= 0")
    x = np.asarray(x, dtype=float)
    if isinstance(s, Polytope):
        _check_dim(s.d, x)
        return bool(np.all(s.A @ x - s.b <= tol))
    _check_dim(s.d, x)
    if s.mode == EXACT_CONE:
        lhs = s.A_hat @ x + s.radius * np.linalg.norm(x)
        return bool(np.all(lhs - s.b <= tol))
    tight = s.tightened()
    if not np.all(tight.A @ x - tight.b <= tol):
        return False
    return bool(np.linalg.norm(x) - s.ball() <= tol)


def project_halfspace(a, b: float, z) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    z = np.asarray(z, dtype=float)
    nsq = float(a @ a)
    if nsq == 0.0:
        raise ZeroNormal("halfspace normal is zero")
    viol = float(a @ z) - b
    if viol <= 0.0:
        return z.copy()
    return z - (viol / nsq) * a


def raise_for_status(status: int, what: str, residual: float, iters: int):
    if status == kernels.OK:
        return
    if status == kernels.MAX_ITER:
        raise MaxIterationsExceeded(
            f"{what}: no convergence after {iters} sweeps (residual {residual:.3e})",
            residual=residual,
            iterations=iters,
        )
    if status == kernels.INFEASIBLE:
        raise InfeasibleConstraintSet(f"{what}: constraint set is empty", residual, iters)
    raise NoConvergence(f"{what}: bisection did not converge", residual, iters)


class ProjectionTrace:
    """Collects (kind, iterations, residual) rows when projection tracing is on."""

    def __init__(self):
        self.rows: list[tuple[str, int, float]] = []

    def add(self, kind: str, iters: int, residual: float):
        self.rows.append((kind, int(iters), float(residual)))


def project_polytope(poly: Polytope, z, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
                     trace: ProjectionTrace | None = None) -> np.ndarray:
    """Euclidean projection onto ``{x : A x <= b}`` by Dykstra's algorithm."""
    z = np.asarray(z, dtype=float)
    _check_dim(poly.d, z)
    if np.any(np.einsum("ij,ij->i", poly.A, poly.A) == 0.0):
        raise ZeroNormal("polytope has a zero row")
    x, it, res, st = kernels.dykstra_polytope(poly.A, poly.b, np.inf, z, tol, max_iter)
    if trace is not None:
        trace.add("polytope", it, res)
    raise_for_status(st, "polytope projection", res, it)
    return x


def project_cone_constraint(a_hat, b: float, radius: float, z, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Projection onto ``{x : a_hat^T x + radius ||x|| <= b}``.

    For a multiplier mu the Lagrangian minimiser is the norm-prox of
    ``z - mu a_hat``, i.e. ``(z - mu a_hat) * max(0, 1 - mu r / ||z - mu a_hat||)``;
    mu is then bisected on the constraint residual, which is nonincreasing in
    mu. The returned point is always on the feasible side.
    """
    if radius < 0:
        raise ValueError("radius must be >= 0")
    a_hat = np.asarray(a_hat, dtype=float)
    z = np.asarray(z, dtype=float)
    if radius == 0.0:
        return project_halfspace(a_hat, b, z)
    x, st = kernels.project_cone(a_hat, b, radius, z, tol)
    raise_for_status(st, "cone projection", np.nan, 0)
    return x


def project_robust_set(s: RobustSafeSet, z, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
                       trace: ProjectionTrace | None = None) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    _check_dim(s.d, z)
    mode, A, b, r, ball = s.kernel_args()
    if mode == kernels.MODE_CONE:
        x, it, res, st = kernels.dykstra_cones(A, b, r, z, tol, max_iter)
    else:
        x, it, res, st = kernels.dykstra_polytope(A, b, ball, z, tol, max_iter)
    if trace is not None:
        trace.add(s.mode, it, res)
    raise_for_status(st, f"{s.mode} projection", res, it)
    return x


def chebyshev_center(poly: Polytope) -> tuple[np.ndarray, float]:
    """Center and radius of the largest inscribed ball (radius < 0 means empty)."""
    norms = np.linalg.norm(poly.A, axis=1)
    d = poly.d
    c = np.zeros(d + 1)
    c[-1] = -1.0
    A_ub = np.hstack([poly.A, norms[:, None]])
    res = linprog(c, A_ub=A_ub, b_ub=poly.b, bounds=[(None, None)] * d + [(None, 1e6)], method="highs")
    if res.status != 0:
        return np.full(d, np.nan), -np.inf
    return res.x[:d], float(res.x[-1])


def shrink_polytope(poly: Polytope, tau_in: float, interior_hint=None) -> Polytope:
    """``{x : a_k^T x + tau_in <= b_k}``; raises if the result is empty."""
    if tau_in <= 0:
        raise ValueError("tau_in must be > 0")
    shrunk = Polytope(poly.A, poly.b - tau_in)
    if interior_hint is not None and contains(shrunk, interior_hint):
        return shrunk
    _, radius = chebyshev_center(shrunk)
    if radius < 0:
        raise EmptyShrunkSet(f"shrinking by {tau_in:g} empties the polytope (inradius deficit {radius:.3e})")
    return shrunk


def vertices(poly: Polytope, tol: float = 1e-9) -> np.ndarray:
    """All vertices by enumerating d-subsets of active constraints (small n only)."""
    verts = []
    for rows in itertools.combinations(range(poly.n), poly.d):
        M = poly.A[list(rows)]
        if abs(np.linalg.det(M)) < 1e-12:
            continue
        v = np.linalg.solve(M, poly.b[list(rows)])
        if np.all(poly.A @ v <= poly.b + tol):
            verts.append(v)
    if not verts:
        return np.empty((0, poly.d))
    V = np.unique(np.round(np.array(verts), 12), axis=0)
    return V


def is_bounded(poly: Polytope) -> bool:
    for j in range(poly.d):
        for sign in (1.0, -1.0):
            c = np.zeros(poly.d)
            c[j] = -sign
            res = linprog(c, A_ub=poly.A, b_ub=poly.b, bounds=[(None, None)] * poly.d, method="highs")
            if res.status == 3:
                return False
            if res.status != 0:
                return False
    return True


def bounding_box(poly: Polytope, limit: float = np.inf) -> tuple[np.ndarray, np.ndarray]:
    """Coordinatewise extent of the polytope, clipped to [-limit, limit]."""
    lo, hi = np.empty(poly.d), np.empty(poly.d)
    bnd = [(-limit if np.isfinite(limit) else None, limit if np.isfinite(limit) else None)] * poly.d
    for j in range(poly.d):
        for sign, out in ((1.0, lo), (-1.0, hi)):
            c = np.zeros(poly.d)
            c[j] = sign
            res = linprog(c, A_ub=poly.A, b_ub=poly.b, bounds=bnd, method="highs")
            if res.status != 0:
                raise ValueError(f"bounding box LP failed with status {res.status}")
            out[j] = res.x[j]
    return lo, hi


def robust_bounding_box(s: RobustSafeSet) -> tuple[np.ndarray, np.ndarray]:
    """A box containing the robust set (both modes lie inside {A_hat x <= b})."""
    if s.mode == CONSERVATIVE:
        return bounding_box(s.tightened(), s.ball())
    return bounding_box(Polytope(s.A_hat, s.b), s.L)


def norm_bound(poly: Polytope) -> float:
    """L = max ||x|| over a bounded polytope (attained at a vertex)."""
    V = vertices(poly)
    if V.shape[0] == 0:
        raise ValueError("polytope has no vertices")
    return float(np.max(np.linalg.norm(V, axis=1)))


# ---------------------------------------------------------------------------
# polytope generators used by scenarios
# ---------------------------------------------------------------------------


def box(lo, hi) -> Polytope:
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    d = lo.shape[0]
    I = np.eye(d)
    return Polytope(np.vstack([I, -I]), np.concatenate([hi, -lo]))


def regular_polygon(n: int, inradius: float = 1.0, phase: float = 0.0) -> Polytope:
    ang = phase + 2.0 * np.pi * np.arange(n) / n
    A = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    return Polytope(A, np.full(n, inradius))


def regular_simplex(d: int, inradius: float = 1.0) -> Polytope:
    """d+1 unit normals summing to zero, all offsets equal to ``inradius``."""
    E = np.eye(d + 1) - 1.0 / (d + 1)
    # orthonormal basis of the sum-zero subspace
    U, _, _ = np.linalg.svd(E)
    N = E @ U[:, :d]
    N /= np.linalg.norm(N, axis=1, keepdims=True)
    return Polytope(N, np.full(d + 1, inradius))
