"""Online phase: distributed safe OGD over per-agent or shared robust sets,
and the shadow mirror-descent run used to measure the OGD/OMD deviation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DomainViolation, ScheduleInvalid
from .estimation import SafeSetEstimate, build_safe_set
from .geometry import (
    DEFAULT_MAX_ITER,
    DEFAULT_TOL,
    Polytope,
    RobustSafeSet,
    project_robust_set,
    raise_for_status,
)
from .losses import NONCONVEX, LossSequence, MirrorMap
from .network import NetworkTopology, max_consensus

EXPLORE, ESTIMATE, CONSENSUS, OPTIMIZE = 0, 1, 2, 3
PHASE_NAMES = ("explore", "estimate", "consensus", "optimize")


@dataclass(frozen=True)
class Schedule:
    T: int
    T0: int
    T1: int
    eta: float
    consensus_rounds: int = 0

    def __post_init__(self):
        if min(self.T0, self.T1, self.consensus_rounds) < 0:
            raise ScheduleInvalid("phase lengths must be nonnegative")
        if not self.eta > 0:
            raise ScheduleInvalid("eta must be > 0")
        if self.Ts > self.T:
            raise ScheduleInvalid(f"optimization would start at round {self.Ts} after horizon {self.T}")

    @property
    def Ts(self) -> int:
        """First optimization round (1-based)."""
        return self.T0 + self.T1 + self.consensus_rounds + 1

    @classmethod
    def preset(cls, kind: str, T: int, T1: int, diameter: int = 0, c_eta: float = 1.0, c0: float = 1.0,
               T0: int | None = None, eta: float | None = None, t0_floor: int = 0) -> "Schedule":
        """η = c_η T^{-1/3} (convex) or c_η T^{-2/3} (non-convex); T0 = ⌈c0 T^{2/3}⌉."""
        if T < 1:
            raise ScheduleInvalid("horizon must be >= 1")
        power = -2.0 / 3.0 if kind == NONCONVEX else -1.0 / 3.0
        eta = c_eta * T**power if eta is None else eta
        T0 = max(int(math.ceil(c0 * T ** (2.0 / 3.0))), int(t0_floor)) if T0 is None else T0
        rounds = diameter if kind == NONCONVEX else 0
        return cls(int(T), int(T0), int(T1), float(eta), int(rounds))


@dataclass
class AgentState:
    x: np.ndarray
    safe_set: RobustSafeSet
    y: np.ndarray | None = None
    u: np.ndarray | None = None
    z: np.ndarray | None = None


@dataclass
class Scenario:
    """Everything a run needs besides the topology and schedule."""

    truth: Polytope
    baseline: np.ndarray
    losses: LossSequence
    L: float
    exploration_actions: np.ndarray  # (m, T0, d)
    projection_mode: str = "conservative"
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER


@dataclass
class RunRecord:
    actions: np.ndarray  # (T, m, d)
    phase: np.ndarray  # (T,)
    schedule: Schedule
    safe_sets: list
    iterations: np.ndarray  # (T - Ts + 1, m)
    residuals: np.ndarray
    common_owner: int | None = None
    deviation: np.ndarray | None = None  # (T, m), NaN before Ts
    extras: dict = field(default_factory=dict)

    @property
    def T(self) -> int:
        return self.actions.shape[0]

    @property
    def m(self) -> int:
        return self.actions.shape[1]

    def disagreement(self) -> np.ndarray:
        """max_i ||x̄_t - x_{i,t}|| for every round."""
        mean = self.actions.mean(axis=1, keepdims=True)
        return np.max(np.linalg.norm(self.actions - mean, axis=2), axis=1)


def ogd_local_step(state: AgentState, gradient, eta: float, tol: float = DEFAULT_TOL,
                   max_iter: int = DEFAULT_MAX_ITER) -> np.ndarray:
    """y = Π_set(x - η ∇f)."""
    if not eta > 0:
        raise ValueError("eta must be > 0")
    y = project_robust_set(state.safe_set, np.asarray(state.x) - eta * np.asarray(gradient), tol, max_iter)
    state.y = y
    return y


def _prefix(scenario: Scenario, schedule: Schedule, m: int) -> tuple[np.ndarray, np.ndarray]:
    T, d = schedule.T, scenario.baseline.size
    X = np.empty((T, m, d))
    phase = np.empty(T, dtype=np.int8)
    ex = np.asarray(scenario.exploration_actions, dtype=float)
    if ex.shape[:2] != (m, schedule.T0):
        raise ScheduleInvalid(f"exploration log covers {ex.shape[:2]}, schedule needs {(m, schedule.T0)}")
    X[: schedule.T0] = ex.transpose(1, 0, 2)
    phase[: schedule.T0] = EXPLORE
    end_est = schedule.T0 + schedule.T1
    X[schedule.T0 : schedule.Ts - 1] = scenario.baseline
    phase[schedule.T0 : end_est] = ESTIMATE
    phase[end_est : schedule.Ts - 1] = CONSENSUS
    phase[schedule.Ts - 1 :] = OPTIMIZE
    return X, phase


def _run_loop(scenario: Scenario, topology: NetworkTopology, schedule: Schedule, sets: list,
              backend: str | None) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    m = topology.m
    seq = scenario.losses
    if seq.T != schedule.T or seq.m != m:
        raise ScheduleInvalid("loss sequence does not match schedule horizon or agent count")
    X, phase = _prefix(scenario, schedule, m)
    args = [s.kernel_args() for s in sets]
    modes = {a[0] for a in args}
    if len(modes) != 1:
        raise ValueError("all agents must share one projection mode")
    A_sets = np.stack([a[1] for a in args])
    b_sets = np.stack([a[2] for a in args])
    radii = np.array([a[3] for a in args])
    balls = np.array([a[4] for a in args])
    x0 = np.tile(scenario.baseline, (m, 1))
    targets = seq.targets[schedule.Ts - 1 :]
    Xo, _, iters, resid, st, t_fail, i_fail = kernels.ogd_loop(
        x0, targets, seq.grad_kind, topology.P, A_sets, b_sets, radii, balls, modes.pop(),
        schedule.eta, scenario.tol, scenario.max_iter, backend=backend,
    )
    if st != kernels.OK:
        raise_for_status(int(st), f"round {schedule.Ts + int(t_fail)}, agent {int(i_fail)}",
                         float(resid[t_fail, i_fail]), int(iters[t_fail, i_fail]))
    X[schedule.Ts - 1 :] = Xo
    return X, phase, iters, resid


def _sets_from_estimates(scenario: Scenario, estimates) -> list:
    return [
        build_safe_set(e.A_hat, scenario.truth.b, e.radius, scenario.projection_mode, scenario.L, scenario.baseline)
        for e in estimates
    ]


def run_d_safe_ogd_convex(scenario: Scenario, topology: NetworkTopology, schedule: Schedule,
                          estimates: list[SafeSetEstimate], backend: str | None = None) -> RunRecord:
    """Each agent projects onto its own robust set, then mixes with its neighbours."""
    if len(estimates) != topology.m:
        raise ValueError("need one estimate per agent")
    sets = _sets_from_estimates(scenario, estimates)
    X, phase, iters, resid = _run_loop(scenario, topology, schedule, sets, backend)
    return RunRecord(X, phase, schedule, sets, iters, resid)


def common_estimate(estimates: list[SafeSetEstimate], topology: NetworkTopology) -> SafeSetEstimate:
    """Max-norm consensus over the agents' estimates."""
    stacked = np.stack([e.A_hat for e in estimates])
    A, owner = max_consensus(stacked, topology, return_owner=True)
    return estimates[owner]


def run_d_safe_ogd_nonconvex(scenario: Scenario, topology: NetworkTopology, schedule: Schedule,
                             estimates: list[SafeSetEstimate], shadow: bool = True,
                             backend: str | None = None) -> RunRecord:
    """One shared robust set from max-norm consensus; otherwise the same OGD loop."""
    if len(estimates) != topology.m:
        raise ValueError("need one estimate per agent")
    if schedule.consensus_rounds != topology.diameter:
        raise ScheduleInvalid("non-convex schedule must reserve D_G consensus rounds")
    chosen = common_estimate(estimates, topology)
    sets = _sets_from_estimates(scenario, [chosen] * topology.m)
    X, phase, iters, resid = _run_loop(scenario, topology, schedule, sets, backend)
    rec = RunRecord(X, phase, schedule, sets, iters, resid, common_owner=chosen.agent)
    if shadow and scenario.losses.lo is not None:
        rec.deviation = shadow_omd_deviation(rec, scenario.losses, topology)
    return rec


def omd_local_step(u, gradient_tilde, eta: float, mirror: MirrorMap, lo_u, hi_u) -> np.ndarray:
    """Bregman-regularized step over a box in mirror space, solved coordinatewise."""
    u = np.asarray(u, dtype=float)
    g = np.asarray(gradient_tilde, dtype=float)
    if mirror.is_identity:
        return np.clip(u - eta * g, lo_u, hi_u)
    if np.any(u <= 0):
        raise DomainViolation("mirror iterate left the positive orthant")
    return np.clip(u * np.exp(-eta * g), lo_u, hi_u)


def shadow_omd_deviation(record: RunRecord, seq: LossSequence, topology: NetworkTopology) -> np.ndarray:
    """||q(x_{i,t+1}) - u_{i,t+1}|| where u_{i,t+1} mixes OMD steps taken from u_{j,t} = q(x_{j,t}).

    The mirror iterate is re-anchored at q of the OGD action every round, so
    each entry isolates the one-round OGD/OMD discrepancy.
    """
    mirror = seq.mirror
    lo_u, hi_u = mirror.q(seq.lo), mirror.q(seq.hi)
    s = record.schedule.Ts - 1
    X = record.actions[s:]
    U = mirror.q(X)
    dev = np.full((record.T, record.m), np.nan)
    dev[s] = 0.0
    if X.shape[0] < 2:
        return dev
    if not mirror.is_identity and np.any(U <= 0):
        raise DomainViolation("OGD action left the positive orthant")
    g = U[:-1] - seq.targets[s : record.T - 1]
    if mirror.is_identity:
        Z = np.clip(U[:-1] - record.schedule.eta * g, lo_u, hi_u)
    else:
        Z = np.clip(U[:-1] * np.exp(-record.schedule.eta * g), lo_u, hi_u)
    mixed = np.einsum("ji,tjk->tik", topology.P, Z)
    dev[s + 1 :] = np.linalg.norm(U[1:] - mixed, axis=2)
    return dev


def consensus_disagreement(record: RunRecord, t: int) -> float:
    """max_i ||x̄_t - x_{i,t}|| at 1-based round t (t >= Ts)."""
    if t < record.schedule.Ts or t > record.T:
        raise ValueError(f"round {t} outside the optimization phase")
    X = record.actions[t - 1]
    return float(np.max(np.linalg.norm(X - X.mean(axis=0), axis=1)))


def disagreement_bound(eta: float, G: float, topology: NetworkTopology, tol: float = DEFAULT_TOL) -> float:
    """2 η G sqrt(m) β / (1 - β) + 10 tol for runs on a shared set."""
    return 2.0 * eta * G * topology.consensus_factor() + 10.0 * tol
