"""Regret, safety and scaling metrics computed from recorded trajectories."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import HorizonMismatch
from .geometry import Polytope
from .losses import LossSequence, MinimizerTrace

VIOLATION_TOL = 1e-9


@dataclass
class RegretReport:
    per_agent: np.ndarray  # Reg_{j,T}
    path_length: float
    violation_count: int
    worst_slack: float
    Ts: int
    term_I: np.ndarray | None = None
    term_II: np.ndarray | None = None
    term_III: np.ndarray | None = None

    def decomposition_gap(self) -> float:
        """max_j |I + II + III - total|."""
        if self.term_I is None:
            return float("nan")
        return float(np.max(np.abs(self.term_I + self.term_II + self.term_III - self.per_agent)))

    def to_dict(self) -> dict:
        out = {
            "regret": [float(v) for v in self.per_agent],
            "path_length": float(self.path_length),
            "violation_count": int(self.violation_count),
            "worst_slack": float(self.worst_slack),
            "Ts": int(self.Ts),
        }
        if self.term_I is not None:
            out["term_I"] = [float(v) for v in self.term_I]
            out["term_II"] = [float(v) for v in self.term_II]
            out["term_III"] = [float(v) for v in self.term_III]
        return out


@dataclass
class SafetyAudit:
    violations: int
    worst_slack: float


def safety_audit(actions, truth: Polytope, tol: float = VIOLATION_TOL) -> SafetyAudit:
    """Count actions (any round, any agent) with a constraint slack below -tol."""
    X = np.asarray(actions, dtype=float).reshape(-1, truth.d)
    if X.shape[0] == 0:
        return SafetyAudit(0, float("inf"))
    slack = np.min(truth.b - X @ truth.A.T, axis=1)
    return SafetyAudit(int(np.sum(slack < -tol)), float(np.min(slack)))


def _fsum_columns(M: np.ndarray) -> np.ndarray:
    return np.array([math.fsum(M[:, j]) for j in range(M.shape[1])])


def compute_regret(actions, trace: MinimizerTrace, seq: LossSequence, Ts: int, truth: Polytope | None = None,
                   shrunk_star=None) -> RegretReport:
    """Per-agent dynamic regret in the global loss, summed from round 1.

    With ``shrunk_star`` (the comparator projected onto the shrunk set) the
    total is also split into rounds before Ts, the gap to the shrunk
    comparator, and the comparator's own shrinkage cost.
    """
    X = np.asarray(actions, dtype=float)
    if X.shape[0] != trace.T or seq.T != trace.T:
        raise HorizonMismatch(f"record covers {X.shape[0]} rounds, trace {trace.T}, losses {seq.T}")
    F = seq.global_losses(X)
    F_star = seq.global_losses(trace.x_star)
    gap = F - F_star[:, None]
    total = _fsum_columns(gap)
    audit = safety_audit(X, truth) if truth is not None else SafetyAudit(0, float("nan"))
    report = RegretReport(total, trace.path_length, audit.violations, audit.worst_slack, int(Ts))
    if shrunk_star is not None:
        s = Ts - 1
        F_tilde = seq.global_losses(np.asarray(shrunk_star, dtype=float))
        report.term_I = _fsum_columns(gap[:s])
        report.term_II = _fsum_columns(F[s:] - F_tilde[s:, None])
        report.term_III = np.full(X.shape[1], math.fsum(F_tilde[s:] - F_star[s:]))
    return report


@dataclass
class ExponentFit:
    slope: float
    intercept: float
    ci_low: float
    ci_high: float
    r_squared: float

    def to_dict(self) -> dict:
        return {k: float(v) for k, v in self.__dict__.items()}


def fit_exponent(x, y) -> ExponentFit:
    """OLS slope of log y on log x with a 95% t-interval."""
    lx = np.log(np.asarray(x, dtype=float))
    ly = np.log(np.asarray(y, dtype=float))
    if lx.size < 3:
        raise ValueError("need at least three points for an interval")
    res = stats.linregress(lx, ly)
    half = stats.t.ppf(0.975, lx.size - 2) * res.stderr
    return ExponentFit(res.slope, res.intercept, res.slope - half, res.slope + half, res.rvalue**2)
