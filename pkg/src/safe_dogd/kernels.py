"""Numeric kernels: Dykstra projections, single cone-constraint projection,
and the synchronous projected-gradient round loop.

Every kernel exists twice. ``_nb_*`` functions are written as explicit scalar
loops and compiled with numba; ``_np_*`` functions are the pure-numpy
reference path. The public names at the bottom of the module dispatch on
``_backend.USE_NUMBA``. Kernels never raise; they return a status code that
the geometry/optimizer layer turns into an exception.
"""

from __future__ import annotations

import math

import numpy as np

from . import _backend
from ._backend import njit

OK = 0
MAX_ITER = 1
INFEASIBLE = 2
NO_CONVERGENCE = 3

MODE_POLYTOPE = 0
MODE_CONE = 1

GRAD_TRACKING = 0
GRAD_QUADRATIC_REPARAM = 1

_POLISH_SWEEPS = 50
_BRACKET_DOUBLINGS = 400
_BISECTION_STEPS = 300


# ---------------------------------------------------------------------------
# numba path
# ---------------------------------------------------------------------------


@njit
def _nb_norm(v):
    s = 0.0
    for j in range(v.shape[0]):
        s += v[j] * v[j]
    return math.sqrt(s)


@njit
def _nb_dot(a, v):
    s = 0.0
    for j in range(v.shape[0]):
        s += a[j] * v[j]
    return s


@njit
def _nb_polytope_violation(A, b, ball, x):
    worst = -np.inf
    for k in range(A.shape[0]):
        v = _nb_dot(A[k], x) - b[k]
        if v > worst:
            worst = v
    if ball < np.inf:
        v = _nb_norm(x) - ball
        if v > worst:
            worst = v
    return worst


@njit
def _nb_project_ball(y, radius, out):
    nrm = _nb_norm(y)
    if nrm > radius:
        s = radius / nrm
        for j in range(y.shape[0]):
            out[j] = y[j] * s
    else:
        for j in range(y.shape[0]):
            out[j] = y[j]


@njit
def _nb_dykstra_polytope(A, b, ball, z, tol, max_iter):
    n, d = A.shape
    x = z.copy()
    if _nb_polytope_violation(A, b, ball, x) <= 0.0:
        return x, 0, 0.0, OK
    nsq = np.empty(n)
    for k in range(n):
        nsq[k] = _nb_dot(A[k], A[k])
    nsets = n + (1 if ball < np.inf else 0)
    p = np.zeros((nsets, d))
    y = np.empty(d)
    xn = np.empty(d)
    status = MAX_ITER
    it = 0
    change = np.inf
    for it in range(1, max_iter + 1):
        change = 0.0
        for k in range(nsets):
            for j in range(d):
                y[j] = x[j] + p[k, j]
            if k < n:
                viol = _nb_dot(A[k], y) - b[k]
                if viol > 0.0:
                    c = viol / nsq[k]
                    for j in range(d):
                        xn[j] = y[j] - c * A[k, j]
                else:
                    for j in range(d):
                        xn[j] = y[j]
            else:
                _nb_project_ball(y, ball, xn)
            for j in range(d):
                newp = y[j] - xn[j]
                diff = newp - p[k, j]
                change += diff * diff
                p[k, j] = newp
                x[j] = xn[j]
        if change <= tol * tol and _nb_polytope_violation(A, b, ball, x) <= tol:
            status = OK
            break
    # push the last ~tol of infeasibility out with plain cyclic projections
    for _ in range(_POLISH_SWEEPS):
        if _nb_polytope_violation(A, b, ball, x) <= 0.0:
            break
        for k in range(n):
            viol = _nb_dot(A[k], x) - b[k]
            if viol > 0.0:
                c = (viol + 1e-15 * (1.0 + abs(b[k]))) / nsq[k]
                for j in range(d):
                    x[j] -= c * A[k, j]
        if ball < np.inf:
            _nb_project_ball(x.copy(), ball * (1.0 - 1e-15), x)
    return x, it, math.sqrt(change), status


@njit
def _nb_cone_point(a, r, z, mu, out):
    d = z.shape[0]
    for j in range(d):
        out[j] = z[j] - mu * a[j]
    nw = _nb_norm(out)
    if nw <= mu * r:
        for j in range(d):
            out[j] = 0.0
    else:
        s = 1.0 - mu * r / nw
        for j in range(d):
            out[j] *= s


@njit
def _nb_cone_residual(a, b, r, x):
    return _nb_dot(a, x) + r * _nb_norm(x) - b


@njit
def _nb_project_cone(a, b, r, z, tol, out):
    d = z.shape[0]
    if _nb_cone_residual(a, b, r, z) <= 0.0:
        for j in range(d):
            out[j] = z[j]
        return OK
    if r == 0.0:
        c = (_nb_dot(a, z) - b) / _nb_dot(a, a)
        for j in range(d):
            out[j] = z[j] - c * a[j]
        return OK
    lo = 0.0
    hi = 1.0
    found = False
    for _ in range(_BRACKET_DOUBLINGS):
        _nb_cone_point(a, r, z, hi, out)
        if _nb_cone_residual(a, b, r, out) <= 0.0:
            found = True
            break
        lo = hi
        hi *= 2.0
    if not found:
        return INFEASIBLE
    status = NO_CONVERGENCE
    for _ in range(_BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            status = OK
            break
        _nb_cone_point(a, r, z, mid, out)
        g = _nb_cone_residual(a, b, r, out)
        if g <= 0.0:
            hi = mid
            if g >= -tol * 1e-3:
                status = OK
                break
        else:
            lo = mid
    _nb_cone_point(a, r, z, hi, out)
    if status == NO_CONVERGENCE and _nb_cone_residual(a, b, r, out) >= -tol:
        status = OK
    return status


@njit
def _nb_cone_violation(A, b, r, x):
    worst = -np.inf
    nx = _nb_norm(x)
    for k in range(A.shape[0]):
        v = _nb_dot(A[k], x) + r * nx - b[k]
        if v > worst:
            worst = v
    return worst


@njit
def _nb_dykstra_cones(A, b, r, z, tol, max_iter):
    n, d = A.shape
    x = z.copy()
    if _nb_cone_violation(A, b, r, x) <= 0.0:
        return x, 0, 0.0, OK
    p = np.zeros((n, d))
    y = np.empty(d)
    xn = np.empty(d)
    status = MAX_ITER
    it = 0
    change = np.inf
    for it in range(1, max_iter + 1):
        change = 0.0
        for k in range(n):
            for j in range(d):
                y[j] = x[j] + p[k, j]
            st = _nb_project_cone(A[k], b[k], r, y, tol, xn)
            if st == INFEASIBLE or st == NO_CONVERGENCE:
                return x, it, np.inf, st
            for j in range(d):
                newp = y[j] - xn[j]
                diff = newp - p[k, j]
                change += diff * diff
                p[k, j] = newp
                x[j] = xn[j]
        if change <= tol * tol and _nb_cone_violation(A, b, r, x) <= tol:
            status = OK
            break
    for _ in range(_POLISH_SWEEPS):
        if _nb_cone_violation(A, b, r, x) <= 0.0:
            break
        for k in range(n):
            if _nb_cone_residual(A[k], b[k], r, x) > 0.0:
                y[:] = x
                _nb_project_cone(A[k], b[k] - 1e-15 * (1.0 + abs(b[k])), r, y, tol, x)
    return x, it, math.sqrt(change), status


@njit
def _nb_project_set(mode, A, b, r, ball, z, tol, max_iter):
    if mode == MODE_CONE:
        return _nb_dykstra_cones(A, b, r, z, tol, max_iter)
    return _nb_dykstra_polytope(A, b, ball, z, tol, max_iter)


@njit
def _nb_ogd_loop(x0, targets, grad_kind, P, A_sets, b_sets, radii, balls, mode, eta, tol, max_iter):
    R, m, d = targets.shape
    X = np.empty((R, m, d))
    Y = np.empty((R, m, d))
    iters = np.zeros((R, m), dtype=np.int64)
    resid = np.zeros((R, m))
    x = x0.copy()
    z = np.empty(d)
    for t in range(R):
        for i in range(m):
            for j in range(d):
                X[t, i, j] = x[i, j]
                xi = x[i, j]
                if grad_kind == GRAD_QUADRATIC_REPARAM:
                    g = 0.5 * xi * (0.25 * xi * xi - targets[t, i, j])
                else:
                    g = xi - targets[t, i, j]
                z[j] = xi - eta * g
            y, it, res, st = _nb_project_set(
                mode, A_sets[i], b_sets[i], radii[i], balls[i], z, tol, max_iter
            )
            if st != OK:
                return X, Y, iters, resid, st, t, i
            for j in range(d):
                Y[t, i, j] = y[j]
            iters[t, i] = it
            resid[t, i] = res
        for i in range(m):
            for j in range(d):
                s = 0.0
                for k in range(m):
                    s += P[k, i] * Y[t, k, j]
                x[i, j] = s
    return X, Y, iters, resid, OK, R, 0


# ---------------------------------------------------------------------------
# numpy path
# ---------------------------------------------------------------------------


def _np_polytope_violation(A, b, ball, x):
    worst = float(np.max(A @ x - b)) if A.shape[0] else -np.inf
    if np.isfinite(ball):
        worst = max(worst, float(np.linalg.norm(x)) - ball)
    return worst


def _np_dykstra_polytope(A, b, ball, z, tol, max_iter):
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    x = np.array(z, dtype=float)
    if _np_polytope_violation(A, b, ball, x) <= 0.0:
        return x, 0, 0.0, OK
    n, d = A.shape
    nsq = np.einsum("ij,ij->i", A, A)
    has_ball = np.isfinite(ball)
    p = np.zeros((n + int(has_ball), d))
    status = MAX_ITER
    it = 0
    change = np.inf
    for it in range(1, max_iter + 1):
        change = 0.0
        for k in range(p.shape[0]):
            y = x + p[k]
            if k < n:
                viol = A[k] @ y - b[k]
                xn = y - (viol / nsq[k]) * A[k] if viol > 0.0 else y
            else:
                nrm = np.linalg.norm(y)
                xn = y * (ball / nrm) if nrm > ball else y
            newp = y - xn
            change += float(np.sum((newp - p[k]) ** 2))
            p[k] = newp
            x = xn
        if change <= tol * tol and _np_polytope_violation(A, b, ball, x) <= tol:
            status = OK
            break
    x = np.array(x, dtype=float)
    for _ in range(_POLISH_SWEEPS):
        if _np_polytope_violation(A, b, ball, x) <= 0.0:
            break
        for k in range(n):
            viol = A[k] @ x - b[k]
            if viol > 0.0:
                x -= ((viol + 1e-15 * (1.0 + abs(b[k]))) / nsq[k]) * A[k]
        if has_ball:
            nrm = np.linalg.norm(x)
            if nrm > ball * (1.0 - 1e-15):
                x *= ball * (1.0 - 1e-15) / nrm
    return x, it, math.sqrt(change), status


def _np_cone_point(a, r, z, mu):
    w = z - mu * a
    nw = np.linalg.norm(w)
    if nw <= mu * r:
        return np.zeros_like(z)
    return w * (1.0 - mu * r / nw)


def _np_cone_residual(a, b, r, x):
    return float(a @ x + r * np.linalg.norm(x) - b)


def _np_project_cone(a, b, r, z, tol):
    a = np.asarray(a, dtype=float)
    z = np.asarray(z, dtype=float)
    if _np_cone_residual(a, b, r, z) <= 0.0:
        return z.copy(), OK
    if r == 0.0:
        return z - ((a @ z - b) / (a @ a)) * a, OK
    lo, hi = 0.0, 1.0
    for _ in range(_BRACKET_DOUBLINGS):
        if _np_cone_residual(a, b, r, _np_cone_point(a, r, z, hi)) <= 0.0:
            break
        lo, hi = hi, 2.0 * hi
    else:
        return z.copy(), INFEASIBLE
    status = NO_CONVERGENCE
    for _ in range(_BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            status = OK
            break
        g = _np_cone_residual(a, b, r, _np_cone_point(a, r, z, mid))
        if g <= 0.0:
            hi = mid
            if g >= -tol * 1e-3:
                status = OK
                break
        else:
            lo = mid
    x = _np_cone_point(a, r, z, hi)
    if status == NO_CONVERGENCE and _np_cone_residual(a, b, r, x) >= -tol:
        status = OK
    return x, status


def _np_cone_violation(A, b, r, x):
    return float(np.max(A @ x + r * np.linalg.norm(x) - b))


def _np_dykstra_cones(A, b, r, z, tol, max_iter):
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    x = np.array(z, dtype=float)
    if _np_cone_violation(A, b, r, x) <= 0.0:
        return x, 0, 0.0, OK
    n, d = A.shape
    p = np.zeros((n, d))
    status = MAX_ITER
    it = 0
    change = np.inf
    for it in range(1, max_iter + 1):
        change = 0.0
        for k in range(n):
            y = x + p[k]
            xn, st = _np_project_cone(A[k], b[k], r, y, tol)
            if st in (INFEASIBLE, NO_CONVERGENCE):
                return x, it, np.inf, st
            newp = y - xn
            change += float(np.sum((newp - p[k]) ** 2))
            p[k] = newp
            x = xn
        if change <= tol * tol and _np_cone_violation(A, b, r, x) <= tol:
            status = OK
            break
    for _ in range(_POLISH_SWEEPS):
        if _np_cone_violation(A, b, r, x) <= 0.0:
            break
        for k in range(n):
            if _np_cone_residual(A[k], b[k], r, x) > 0.0:
                x, _ = _np_project_cone(A[k], b[k] - 1e-15 * (1.0 + abs(b[k])), r, x, tol)
    return x, it, math.sqrt(change), status


def _np_project_set(mode, A, b, r, ball, z, tol, max_iter):
    if mode == MODE_CONE:
        return _np_dykstra_cones(A, b, r, z, tol, max_iter)
    return _np_dykstra_polytope(A, b, ball, z, tol, max_iter)


def _np_ogd_loop(x0, targets, grad_kind, P, A_sets, b_sets, radii, balls, mode, eta, tol, max_iter):
    R, m, d = targets.shape
    X = np.empty((R, m, d))
    Y = np.empty((R, m, d))
    iters = np.zeros((R, m), dtype=np.int64)
    resid = np.zeros((R, m))
    x = np.array(x0, dtype=float)
    for t in range(R):
        X[t] = x
        if grad_kind == GRAD_QUADRATIC_REPARAM:
            g = 0.5 * x * (0.25 * x * x - targets[t])
        else:
            g = x - targets[t]
        z = x - eta * g
        for i in range(m):
            y, it, res, st = _np_project_set(
                mode, A_sets[i], b_sets[i], radii[i], balls[i], z[i], tol, max_iter
            )
            if st != OK:
                return X, Y, iters, resid, st, t, i
            Y[t, i] = y
            iters[t, i] = it
            resid[t, i] = res
        x = P.T @ Y[t]
    return X, Y, iters, resid, OK, R, 0


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

NUMBA = {
    "dykstra_polytope": _nb_dykstra_polytope,
    "dykstra_cones": _nb_dykstra_cones,
    "ogd_loop": _nb_ogd_loop,
}
NUMPY = {
    "dykstra_polytope": _np_dykstra_polytope,
    "dykstra_cones": _np_dykstra_cones,
    "ogd_loop": _np_ogd_loop,
}


def implementations(name: str | None = None):
    """Kernel table for the active backend (or a named one: 'numba'/'numpy')."""
    name = name or _backend.backend_name()
    return NUMBA if name == "numba" else NUMPY


def project_cone(a, b, r, z, tol, backend: str | None = None):
    """Single cone-constraint projection; returns ``(x, status)``."""
    a = np.ascontiguousarray(a, dtype=float)
    z = np.ascontiguousarray(z, dtype=float)
    if (backend or _backend.backend_name()) == "numba":
        out = np.empty_like(z)
        st = _nb_project_cone(a, float(b), float(r), z, float(tol), out)
        return out, int(st)
    return _np_project_cone(a, float(b), float(r), z, float(tol))


def dykstra_polytope(A, b, ball, z, tol, max_iter, backend: str | None = None):
    fn = implementations(backend)["dykstra_polytope"]
    x, it, res, st = fn(
        np.ascontiguousarray(A, dtype=float),
        np.ascontiguousarray(b, dtype=float),
        float(ball),
        np.ascontiguousarray(z, dtype=float),
        float(tol),
        int(max_iter),
    )
    return x, int(it), float(res), int(st)


def dykstra_cones(A, b, r, z, tol, max_iter, backend: str | None = None):
    fn = implementations(backend)["dykstra_cones"]
    x, it, res, st = fn(
        np.ascontiguousarray(A, dtype=float),
        np.ascontiguousarray(b, dtype=float),
        float(r),
        np.ascontiguousarray(z, dtype=float),
        float(tol),
        int(max_iter),
    )
    return x, int(it), float(res), int(st)


def ogd_loop(x0, targets, grad_kind, P, A_sets, b_sets, radii, balls, mode, eta, tol, max_iter,
             backend: str | None = None):
    fn = implementations(backend)["ogd_loop"]
    return fn(
        np.ascontiguousarray(x0, dtype=float),
        np.ascontiguousarray(targets, dtype=float),
        int(grad_kind),
        np.ascontiguousarray(P, dtype=float),
        np.ascontiguousarray(A_sets, dtype=float),
        np.ascontiguousarray(b_sets, dtype=float),
        np.ascontiguousarray(radii, dtype=float),
        np.ascontiguousarray(balls, dtype=float),
        int(mode),
        float(eta),
        float(tol),
        int(max_iter),
    )
