"""Communication graph: mixing-matrix validation, spectral quantities,
one-round averaging and max-consensus."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    Disconnected,
    DimensionMismatch,
    NotDoublyStochastic,
    NotSymmetric,
    ShapeMismatch,
    ZeroDiagonal,
)

STOCHASTIC_TOL = 1e-12
RENORMALIZE_TOL = 1e-9


@dataclass(frozen=True)
class NetworkTopology:
    P: np.ndarray
    beta: float
    diameter: int
    m: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "m", int(self.P.shape[0]))

    @property
    def P_tilde(self) -> np.ndarray:
        """``(I + P) / 2``, the second mixing matrix used by EXTRA."""
        return 0.5 * (np.eye(self.m) + self.P)

    def neighbors(self, i: int) -> np.ndarray:
        """Agents j with P[i, j] > 0, including i itself."""
        return np.flatnonzero(self.P[i] > 0.0)

    def consensus_factor(self) -> float:
        """sqrt(m) * beta / (1 - beta), the geometric-mixing amplification."""
        return float(np.sqrt(self.m) * self.beta / (1.0 - self.beta))


def jacobi_singular_values(M: np.ndarray, tol: float = 1e-15, max_sweeps: int = 100) -> np.ndarray:
    """Singular values of a dense square matrix by one-sided (Hestenes) Jacobi.

    Columns are rotated pairwise until mutually orthogonal; the singular
    values are then the column norms. Returned in descending order.
    """
    U = np.array(M, dtype=float, copy=True)
    n = U.shape[1]
    # columns below this squared norm are numerically zero (rank-deficient M)
    floor = (tol * np.linalg.norm(U)) ** 2
    for _ in range(max_sweeps):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                up, uq = U[:, p], U[:, q]
                alpha = up @ up
                beta = uq @ uq
                gamma = up @ uq
                if min(alpha, beta) <= floor or abs(gamma) <= tol * np.sqrt(alpha) * np.sqrt(beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                # hypot avoids overflow of zeta² when gamma is tiny
                t = np.copysign(1.0, zeta) / (abs(zeta) + np.hypot(1.0, zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                new_p = c * up - s * uq
                new_q = s * up + c * uq
                U[:, p] = new_p
                U[:, q] = new_q
        if not rotated:
            break
    return np.sort(np.linalg.norm(U, axis=0))[::-1]


def second_largest_singular_value(P: np.ndarray) -> float:
    P = np.asarray(P, dtype=float)
    if P.shape[0] < 2:
        return 0.0
    sv = jacobi_singular_values(P)
    # the rank-one averaging matrix gives ~1e-17 instead of an exact zero
    return float(sv[1]) if sv[1] > 1e-14 else 0.0


def _adjacency(P: np.ndarray) -> list[np.ndarray]:
    m = P.shape[0]
    return [np.flatnonzero((P[i] > 0.0) & (np.arange(m) != i)) for i in range(m)]


def _bfs_depths(adj: list[np.ndarray], src: int) -> np.ndarray:
    depth = np.full(len(adj), -1, dtype=int)
    depth[src] = 0
    queue = deque([src])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if depth[v] < 0:
                depth[v] = depth[u] + 1
                queue.append(v)
    return depth


def _diameter_of(P: np.ndarray) -> int:
    adj = _adjacency(P)
    best = 0
    for src in range(P.shape[0]):
        depth = _bfs_depths(adj, src)
        if np.any(depth < 0):
            raise Disconnected(f"agent {src} cannot reach agent {int(np.argmin(depth))}")
        best = max(best, int(depth.max()))
    return best


def graph_diameter(topology: NetworkTopology) -> int:
    return _diameter_of(topology.P)


def _sinkhorn_symmetric(P: np.ndarray, sweeps: int = 50) -> np.ndarray:
    Q = P.copy()
    for _ in range(sweeps):
        Q = Q / Q.sum(axis=1, keepdims=True)
        Q = 0.5 * (Q + Q.T)
    return Q


def validate_topology(P) -> NetworkTopology:
    """Check a mixing matrix and return the topology with beta and diameter.

    Rows within 1e-9 of stochastic are rescaled; anything further off is
    rejected rather than silently repaired.
    """
    P = np.array(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] < 1:
        raise DimensionMismatch(f"mixing matrix must be square, got shape {P.shape}")
    if not np.all(np.isfinite(P)):
        raise ValueError("mixing matrix has non-finite entries")
    asym = float(np.max(np.abs(P - P.T)))
    if asym > STOCHASTIC_TOL:
        raise NotSymmetric(f"max |P - P^T| = {asym:.3e}")
    P = 0.5 * (P + P.T)
    if np.any(P < 0.0) or np.any(P > 1.0):
        raise NotDoublyStochastic("entries must lie in [0, 1]")
    dev = float(np.max(np.abs(P.sum(axis=1) - 1.0)))
    if dev > RENORMALIZE_TOL:
        raise NotDoublyStochastic(f"row sums deviate from 1 by {dev:.3e}")
    if dev > STOCHASTIC_TOL:
        P = _sinkhorn_symmetric(P)
        dev = float(np.max(np.abs(P.sum(axis=1) - 1.0)))
        if dev > STOCHASTIC_TOL:
            raise NotDoublyStochastic(f"renormalization left deviation {dev:.3e}")
    diag = np.diag(P)
    if np.any(diag <= 0.0):
        raise ZeroDiagonal(f"agent {int(np.argmin(diag))} has no self-weight")
    diameter = _diameter_of(P)
    beta = second_largest_singular_value(P)
    return NetworkTopology(P=P, beta=beta, diameter=diameter)


def mix_step(values, topology: NetworkTopology) -> np.ndarray:
    """out_i = sum_j P[j, i] * values_j for per-agent arrays of any trailing shape."""
    V = np.asarray(values, dtype=float)
    if V.shape[0] != topology.m:
        raise DimensionMismatch(f"expected {topology.m} agent values, got {V.shape[0]}")
    return np.tensordot(topology.P.T, V, axes=(1, 0))


def mixing_error(topology: NetworkTopology, k: int, i: int) -> float:
    """sum_j |[P^k]_{ji} - 1/m|."""
    if k < 1:
        raise ValueError("k must be >= 1")
    Pk = np.linalg.matrix_power(topology.P, k)
    return float(np.sum(np.abs(Pk[:, i] - 1.0 / topology.m)))


def max_consensus(estimates, topology: NetworkTopology, return_owner: bool = False):
    """Run D_G synchronous rounds of max-Frobenius-norm consensus.

    Each agent adopts, among its neighbours and itself, the estimate of
    largest norm; equal norms go to the lowest owner index. Norms are computed
    once per original estimate and travel with it, so ties are exact.
    """
    E = np.asarray(estimates, dtype=float)
    if E.shape[0] != topology.m:
        raise ShapeMismatch(f"expected {topology.m} estimates, got {E.shape[0]}")
    m = topology.m
    norms = np.array([np.linalg.norm(E[j]) for j in range(m)])
    owner = np.arange(m)
    nbrs = [topology.neighbors(i) for i in range(m)]
    for _ in range(topology.diameter):
        new_owner = owner.copy()
        for i in range(m):
            cands = owner[nbrs[i]]
            # lexsort: last key is primary -> max norm first, then min owner
            order = np.lexsort((cands, -norms[cands]))
            new_owner[i] = cands[order[0]]
        owner = new_owner
    if np.any(owner != owner[0]):  # pragma: no cover - guaranteed by D_G rounds
        raise RuntimeError("max-consensus did not agree within the graph diameter")
    common = E[owner[0]].copy()
    if return_owner:
        return common, int(owner[0])
    return common


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------


def metropolis_weights(adjacency: np.ndarray) -> np.ndarray:
    """Symmetric doubly stochastic weights w_ij = 1 / (1 + max(deg_i, deg_j))."""
    Adj = np.asarray(adjacency, dtype=bool)
    m = Adj.shape[0]
    deg = Adj.sum(axis=1)
    W = np.zeros((m, m))
    for i in range(m):
        for j in range(i + 1, m):
            if Adj[i, j]:
                W[i, j] = W[j, i] = 1.0 / (1.0 + max(deg[i], deg[j]))
    W[np.diag_indices(m)] = 1.0 - W.sum(axis=1)
    return W


def adjacency_for(name: str, m: int) -> np.ndarray:
    Adj = np.zeros((m, m), dtype=bool)
    if name == "complete":
        Adj[:] = True
    elif name == "ring":
        for i in range(m):
            Adj[i, (i + 1) % m] = Adj[(i + 1) % m, i] = True
    elif name == "path":
        for i in range(m - 1):
            Adj[i, i + 1] = Adj[i + 1, i] = True
    elif name == "star":
        Adj[0, 1:] = Adj[1:, 0] = True
    else:
        raise ValueError(f"unknown topology generator {name!r}")
    np.fill_diagonal(Adj, False)
    return Adj


def named_topology(name: str, m: int) -> NetworkTopology:
    if m < 1:
        raise ValueError("m must be >= 1")
    if m == 1:
        return validate_topology(np.ones((1, 1)))
    return validate_topology(metropolis_weights(adjacency_for(name, m)))


def topology_from_config(block: dict) -> NetworkTopology:
    if "matrix" in block:
        return validate_topology(block["matrix"])
    return named_topology(block["generator"], int(block["m"]))


def mixing_trace(topology: NetworkTopology, kmax: int = 30) -> list[tuple[int, int, float, float]]:
    """Rows (k, agent, deviation, bound) for the geometric mixing diagnostic."""
    rows = []
    Pk = np.eye(topology.m)
    for k in range(1, kmax + 1):
        Pk = Pk @ topology.P
        bound = float(np.sqrt(topology.m) * topology.beta**k)
        for i in range(topology.m):
            rows.append((k, i, float(np.sum(np.abs(Pk[:, i] - 1.0 / topology.m))), bound))
    return rows
