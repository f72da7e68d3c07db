"""Exploration around the safe baseline, noisy constraint observations, the
EXTRA decentralized ridge solver and the confidence radius that turns the
estimates into robust safe sets."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import (
    DimensionMismatch,
    DivergenceDetected,
    EmptyEstimatedSet,
    NonpositiveInput,
    SingularSystem,
)
from .geometry import CONSERVATIVE, Polytope, RobustSafeSet, contains
from .network import NetworkTopology

GAMMA_CEILING = 1.0 - 1e-12
T0_FACTOR = 8.0
DIVERGENCE_FACTOR = 1e6


def _positive(**values):
    for name, v in values.items():
        if not v > 0:
            raise NonpositiveInput(f"{name} must be > 0, got {v}")


# ---------------------------------------------------------------------------
# exploration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExplorationConfig:
    T0: int
    gamma: float
    sigma_zeta: float
    baseline: np.ndarray
    baseline_offsets: np.ndarray
    safety_gap: float

    @classmethod
    def from_truth(cls, truth: Polytope, baseline, T0: int, gamma: float, sigma_zeta: float):
        xs = np.asarray(baseline, dtype=float)
        bs = truth.A @ xs
        return cls(int(T0), float(gamma), float(sigma_zeta), xs, bs, float(np.min(truth.b - bs)))

    def check(self, truth: Polytope, L: float):
        """Raise ValueError naming the first violated invariant."""
        if self.safety_gap <= 0:
            raise ValueError("baseline is not strictly feasible")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if self.gamma > gamma_max(self.safety_gap, L, truth.row_norm_bound) * (1 + 1e-12):
            raise ValueError("gamma exceeds safety_gap / (L * L_A)")
        if self.sigma_zeta * math.sqrt(self.baseline.size) > L * (1 + 1e-12):
            raise ValueError("sigma_zeta * sqrt(d) exceeds L")


def gamma_max(delta_s: float, L: float, L_A: float) -> float:
    """Largest exploration weight Δˢ/(L·L_A), kept strictly below 1."""
    _positive(delta_s=delta_s, L=L, L_A=L_A)
    return min(delta_s / (L * L_A), GAMMA_CEILING)


def offset_aware_gamma(truth: Polytope, baseline, L: float) -> float:
    """Largest γ with (1-γ) bˢ_k + γ L_A L <= b_k for every row.

    Coincides with :func:`gamma_max` when all baseline offsets are
    nonnegative; tighter when some bˢ_k < 0 (e.g. boxes away from the origin).
    """
    bs = truth.A @ np.asarray(baseline, dtype=float)
    gap = truth.b - bs
    reach = truth.row_norm_bound * L - bs
    with np.errstate(divide="ignore"):
        caps = np.where(reach > 0, gap / reach, np.inf)
    return float(min(np.min(caps), GAMMA_CEILING))


def rademacher(rng: np.random.Generator, size) -> np.ndarray:
    return 2.0 * rng.integers(0, 2, size=size).astype(float) - 1.0


def exploration_action(cfg: ExplorationConfig, rng: np.random.Generator) -> np.ndarray:
    zeta = cfg.sigma_zeta * rademacher(rng, cfg.baseline.size)
    return (1.0 - cfg.gamma) * cfg.baseline + cfg.gamma * zeta


def observation_noise(rng: np.random.Generator, R: float, size, kind: str = "gaussian") -> np.ndarray:
    if kind == "gaussian":
        return R * rng.standard_normal(size)
    if kind == "uniform":
        h = R * math.sqrt(3.0)
        return rng.uniform(-h, h, size)
    raise ValueError(f"unknown noise kind {kind!r}")


def observe(truth: Polytope, x, R: float, rng: np.random.Generator, kind: str = "gaussian") -> np.ndarray:
    """Noisy constraint reading A x + w."""
    if R < 0:
        raise ValueError("R must be >= 0")
    x = np.asarray(x, dtype=float)
    clean = truth.A @ x
    if R == 0:
        return clean
    return clean + observation_noise(rng, R, clean.shape, kind)


@dataclass
class ExplorationLog:
    """Per-agent exploration data: actions (m, T0, d) and observations (m, T0, n)."""

    actions: np.ndarray
    observations: np.ndarray
    _gram: np.ndarray | None = field(default=None, repr=False)
    _cross: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.actions = np.asarray(self.actions, dtype=float)
        self.observations = np.asarray(self.observations, dtype=float)
        if self.actions.shape[:2] != self.observations.shape[:2]:
            raise DimensionMismatch("actions and observations disagree on (m, T0)")

    @property
    def m(self) -> int:
        return self.actions.shape[0]

    @property
    def T0(self) -> int:
        return self.actions.shape[1]

    @property
    def d(self) -> int:
        return self.actions.shape[2]

    @property
    def n(self) -> int:
        return self.observations.shape[2]

    def gram(self) -> np.ndarray:
        """G_i = Σ_t x xᵀ per agent, shape (m, d, d)."""
        if self._gram is None:
            self._gram = np.einsum("itj,itk->ijk", self.actions, self.actions)
        return self._gram

    def cross(self) -> np.ndarray:
        """C_i = Σ_t x̂ xᵀ per agent, shape (m, n, d)."""
        if self._cross is None:
            self._cross = np.einsum("itk,itj->ikj", self.observations, self.actions)
        return self._cross

    def agent(self, i: int) -> "ExplorationLog":
        return ExplorationLog(self.actions[i : i + 1], self.observations[i : i + 1])


def explore(cfg: ExplorationConfig, truth: Polytope, m: int, R: float, rngs, noise: str = "gaussian"
            ) -> ExplorationLog:
    """Run T0 exploration rounds for every agent, each on its own stream."""
    if len(rngs) != m:
        raise ValueError("need one random stream per agent")
    d, n = cfg.baseline.size, truth.n
    actions = np.empty((m, cfg.T0, d))
    obs = np.empty((m, cfg.T0, n))
    for i, rng in enumerate(rngs):
        zeta = cfg.sigma_zeta * rademacher(rng, (cfg.T0, d))
        actions[i] = (1.0 - cfg.gamma) * cfg.baseline + cfg.gamma * zeta
        obs[i] = actions[i] @ truth.A.T
        if R > 0:
            obs[i] += observation_noise(rng, R, (cfg.T0, n), noise)
    return ExplorationLog(actions, obs)


def t0_rule(L: float, m: int, gamma: float, sigma_zeta: float, d: int, delta: float,
            factor: float = T0_FACTOR) -> int:
    """Exploration length factor·L²/(mγ²σ_ζ²)·log(d/δ), rounded up."""
    _positive(L=L, m=m, gamma=gamma, sigma_zeta=sigma_zeta, d=d, delta=delta)
    return int(math.ceil(factor * L * L / (m * gamma**2 * sigma_zeta**2) * math.log(d / delta)))


# ---------------------------------------------------------------------------
# least squares
# ---------------------------------------------------------------------------


def local_loss(A_var, log_i: ExplorationLog, lam: float, m: int) -> float:
    A_var = np.asarray(A_var, dtype=float)
    r = log_i.actions[0] @ A_var.T - log_i.observations[0]
    return float(np.sum(r * r) + (lam / m) * np.sum(A_var * A_var))


def local_loss_gradient(A_var, log_i: ExplorationLog, lam: float, m: int) -> np.ndarray:
    """2 Σ_t (A x - x̂) xᵀ + (2λ/m) A for a single agent's log."""
    A_var = np.asarray(A_var, dtype=float)
    if A_var.shape != (log_i.n, log_i.d):
        raise DimensionMismatch(f"estimate shape {A_var.shape} != ({log_i.n}, {log_i.d})")
    G, C = log_i.gram()[0], log_i.cross()[0]
    return 2.0 * (A_var @ G - C) + (2.0 * lam / m) * A_var


def _all_gradients(A, G, C, lam, m):
    return 2.0 * (np.einsum("ikj,ijl->ikl", A, G) - C) + (2.0 * lam / m) * A


def centralized_ridge(log: ExplorationLog, lam: float) -> np.ndarray:
    """argmin_A Σ_i l_i(A) via the normal equations A (Σ x xᵀ + λI) = Σ x̂ xᵀ."""
    _positive(lam=lam)
    V = log.gram().sum(axis=0) + lam * np.eye(log.d)
    C = log.cross().sum(axis=0)
    try:
        factor = cho_factor(V)
    except LinAlgError as exc:  # pragma: no cover - V is positive definite for lam > 0
        raise SingularSystem(str(exc)) from exc
    return cho_solve(factor, C.T).T


def power_iteration(M: np.ndarray, iters: int = 200, tol: float = 1e-12) -> float:
    """Largest eigenvalue of a symmetric positive semidefinite matrix."""
    v = np.ones(M.shape[0]) / math.sqrt(M.shape[0])
    lam = 0.0
    for _ in range(iters):
        w = M @ v
        nw = float(np.linalg.norm(w))
        if nw == 0.0:
            return 0.0
        v = w / nw
        if abs(nw - lam) <= tol * max(nw, 1.0):
            return nw
        lam = nw
    return lam


def extra_step_size(log: ExplorationLog, lam: float, topology: NetworkTopology) -> float:
    """α = 1/(2 L_grad), clipped inside EXTRA's stability region 2λ_min(P̃)/L_grad."""
    worst = max(power_iteration(G) for G in log.gram())
    L_grad = 2.0 * (worst + lam / log.m)
    lam_min = float(np.min(np.linalg.eigvalsh(topology.P_tilde)))
    return min(1.0 / (2.0 * L_grad), 0.9 * 2.0 * lam_min / L_grad)


@dataclass
class ExtraResult:
    estimates: np.ndarray  # (m, n, d)
    iterations: int
    trace: list[tuple[int, int, float, float]]  # (iteration, agent, err to oracle, pairwise)


def _pairwise(A: np.ndarray) -> np.ndarray:
    """Per agent, max_j ||A_i - A_j||_F."""
    diff = A[:, None] - A[None, :]
    return np.sqrt(np.max(np.sum(diff * diff, axis=(2, 3)), axis=1))


def extra_solve(log: ExplorationLog, topology: NetworkTopology, alpha: float, T1: int, lam: float,
                rng: np.random.Generator | None = None, A0=None, oracle=None) -> ExtraResult:
    """Run T1 EXTRA iterations on the global ridge problem.

    ``A0`` fixes the starting point (else drawn from ``rng``). When ``oracle``
    is given, every iterate's Frobenius error to it is recorded.
    """
    if T1 < 1:
        raise ValueError("T1 must be >= 1")
    _positive(alpha=alpha, lam=lam)
    m, n, d = log.m, log.n, log.d
    if topology.m != m:
        raise DimensionMismatch(f"log has {m} agents, topology has {topology.m}")
    G, C = log.gram(), log.cross()
    if A0 is None:
        rng = rng if rng is not None else np.random.default_rng(0)
        A0 = rng.standard_normal((m, n, d))
    prev = np.array(A0, dtype=float).reshape(m, n, d)
    PT = topology.P.T
    PtT = topology.P_tilde.T
    scale = max(1.0, float(np.max(np.abs(log.observations), initial=0.0)), float(np.max(np.abs(prev))))
    limit = DIVERGENCE_FACTOR * scale
    trace: list[tuple[int, int, float, float]] = []

    def record(k, A):
        if oracle is None:
            return
        err = np.sqrt(np.sum((A - oracle) ** 2, axis=(1, 2)))
        pw = _pairwise(A)
        trace.extend((k, i, float(err[i]), float(pw[i])) for i in range(m))

    record(0, prev)
    g_prev = _all_gradients(prev, G, C, lam, m)
    cur = np.tensordot(PT, prev, axes=(1, 0)) - alpha * g_prev
    record(1, cur)
    for k in range(2, T1 + 1):
        g_cur = _all_gradients(cur, G, C, lam, m)
        nxt = (
            2.0 * np.tensordot(PtT, cur, axes=(1, 0))
            - np.tensordot(PtT, prev, axes=(1, 0))
            - alpha * (g_cur - g_prev)
        )
        peak = float(np.max(np.sqrt(np.sum(nxt * nxt, axis=(1, 2)))))
        if not np.isfinite(peak) or peak > limit:
            raise DivergenceDetected(f"EXTRA iterate norm {peak:.3e} at iteration {k}")
        prev, cur, g_prev = cur, nxt, g_cur
        record(k, cur)
    return ExtraResult(cur, T1, trace)


def row_errors(estimates: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """max_k ||â_k^i - a_k|| for each agent i."""
    return np.max(np.linalg.norm(estimates - reference, axis=2), axis=1)


def max_pairwise_row_gap(estimates: np.ndarray) -> float:
    diff = estimates[:, None] - estimates[None, :]
    return float(np.max(np.linalg.norm(diff, axis=3)))


@dataclass
class T1Calibration:
    T1: int
    constant: float
    target: float
    errors: np.ndarray  # max row error to the centralized solution per iteration


def calibrate_T1(log: ExplorationLog, topology: NetworkTopology, alpha: float, lam: float, T: int,
                 rho: float, A0, max_iter: int = 20_000) -> T1Calibration:
    """Smallest iteration count after which every agent's rows stay within
    1/T^ρ of the centralized ridge solution, reported as T1 = ⌈c ρ log T⌉."""
    _positive(T=T, rho=rho)
    oracle = centralized_ridge(log, lam)
    target = float(T) ** (-rho)
    m, n, d = log.m, log.n, log.d
    G, C = log.gram(), log.cross()
    prev = np.array(A0, dtype=float).reshape(m, n, d)
    PT, PtT = topology.P.T, topology.P_tilde.T
    errs = [float(np.max(row_errors(prev, oracle)))]
    g_prev = _all_gradients(prev, G, C, lam, m)
    cur = np.tensordot(PT, prev, axes=(1, 0)) - alpha * g_prev
    errs.append(float(np.max(row_errors(cur, oracle))))
    # run until the error has settled well below target so "stays within" is observable
    k = 1
    while k < max_iter and not (errs[-1] <= 1e-3 * target and k >= 2):
        g_cur = _all_gradients(cur, G, C, lam, m)
        nxt = 2.0 * np.tensordot(PtT, cur, axes=(1, 0)) - np.tensordot(PtT, prev, axes=(1, 0)) \
            - alpha * (g_cur - g_prev)
        if not np.all(np.isfinite(nxt)):
            raise DivergenceDetected(f"EXTRA diverged during calibration at iteration {k + 1}")
        prev, cur, g_prev = cur, nxt, g_cur
        k += 1
        errs.append(float(np.max(row_errors(cur, oracle))))
    errors = np.array(errs)
    above = np.flatnonzero(errors > target)
    if above.size and above[-1] == errors.size - 1:
        raise DivergenceDetected(f"EXTRA did not reach 1/T^rho = {target:.3e} in {max_iter} iterations")
    T1 = max(2, int(above[-1]) + 1 if above.size else 1)
    constant = T1 / (rho * math.log(T))
    return T1Calibration(T1, constant, target, errors)


def t1_from_constant(constant: float, rho: float, T: int) -> int:
    return max(2, int(math.ceil(constant * rho * math.log(T))))


# ---------------------------------------------------------------------------
# confidence radius and safe sets
# ---------------------------------------------------------------------------


def confidence_radius(T, rho, R, d, m, T0, L, lam, delta, n, gamma, sigma_zeta, L_A=1.0) -> float:
    """B_r = 1/T^ρ + (R sqrt(d log((1 + m T0 L²/λ)/(δ/n))) + sqrt(λ) L_A) / sqrt(½ m γ² σ_ζ² T0)."""
    _positive(T=T, rho=rho, d=d, m=m, T0=T0, L=L, lam=lam, n=n, gamma=gamma, sigma_zeta=sigma_zeta,
              L_A=L_A)
    if R < 0:
        raise NonpositiveInput(f"R must be >= 0, got {R}")
    if not 0.0 < delta < 1.0:
        raise NonpositiveInput(f"delta must lie in (0, 1), got {delta}")
    log_term = math.log((1.0 + m * T0 * L * L / lam) / (delta / n))
    numer = R * math.sqrt(d * log_term) + math.sqrt(lam) * L_A
    denom = math.sqrt(0.5 * m * gamma**2 * sigma_zeta**2 * T0)
    return float(T) ** (-rho) + numer / denom


@dataclass(frozen=True)
class SafeSetEstimate:
    A_hat: np.ndarray
    radius: float
    agent: int
    provenance: dict

    def __post_init__(self):
        if not self.radius > 0:
            raise NonpositiveInput("confidence radius must be > 0")

    def to_dict(self) -> dict:
        return {
            "A_hat": np.asarray(self.A_hat).tolist(),
            "radius": float(self.radius),
            "agent": int(self.agent),
            "provenance": dict(self.provenance),
        }

    @classmethod
    def from_dict(cls, block: dict) -> "SafeSetEstimate":
        return cls(np.asarray(block["A_hat"], dtype=float), float(block["radius"]), int(block["agent"]),
                   dict(block.get("provenance", {})))


def containment(estimates: np.ndarray, truth: Polytope, radius: float) -> bool:
    """True iff every row of every agent's estimate is within ``radius`` of the truth."""
    return bool(np.all(row_errors(estimates, truth.A) <= radius))


def build_safe_set(A_hat, b, radius: float, mode: str = CONSERVATIVE, L: float = np.inf,
                   baseline=None) -> RobustSafeSet:
    """Package an estimate as a robust safe set; the baseline must stay inside."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    s = RobustSafeSet(A_hat, b, radius, mode, L)
    if baseline is not None and not contains(s, baseline, tol=0.0):
        raise EmptyEstimatedSet("baseline action is not robustly feasible; confidence radius too large")
    return s
