"""End-to-end runs: scenario construction, exploration, EXTRA, the online
phase, metrics and on-disk artifacts."""

from __future__ import annotations

import hashlib
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, _backend
from .config import ExperimentConfig
from .errors import SafeDOGDError
from .estimation import (
    ExplorationConfig,
    SafeSetEstimate,
    calibrate_T1,
    centralized_ridge,
    confidence_radius,
    containment,
    explore,
    extra_solve,
    extra_step_size,
    max_pairwise_row_gap,
    row_errors,
    t0_rule,
    t1_from_constant,
)
from .geometry import Polytope, project_polytope, robust_bounding_box, shrink_polytope
from .losses import (
    IDENTITY,
    NONCONVEX,
    LossSequence,
    MinimizerTrace,
    box_vertex_distance,
    make_convex_tracking,
    make_nonconvex_family,
    minimizer_trace,
    mirror_by_name,
    reparam_gradient_bound,
)
from .metrics import RegretReport, compute_regret, fit_exponent
from .network import mixing_trace
from .optimizer import (
    PHASE_NAMES,
    RunRecord,
    Scenario,
    Schedule,
    disagreement_bound,
    run_d_safe_ogd_convex,
    run_d_safe_ogd_nonconvex,
)


class PhaseError(SafeDOGDError):
    """A module error annotated with the pipeline phase it came from."""

    def __init__(self, phase: str, cause: Exception):
        super().__init__(f"{phase}: {type(cause).__name__}: {cause}")
        self.phase = phase
        self.cause = cause


@dataclass
class RunResult:
    seed: int
    config: ExperimentConfig
    record: RunRecord
    losses: LossSequence
    trace: MinimizerTrace
    shrunk_star: np.ndarray
    report: RegretReport
    estimates: np.ndarray  # (m, n, d) after EXTRA
    radius: float
    contained: bool
    T1_constant: float
    extra_trace: list
    oracle_gap: float
    pairwise_gap: float
    disagreement: np.ndarray
    G: float
    bound: float | None
    projection_rows: list = field(default_factory=list)

    @property
    def schedule(self) -> Schedule:
        return self.record.schedule

    def summary(self) -> dict:
        s = self.schedule
        dis = self.disagreement[s.Ts - 1 :]
        out = {
            "seed": self.seed,
            "mode": self.config.mode,
            "T": s.T,
            "T0": s.T0,
            "T1": s.T1,
            "Ts": s.Ts,
            "eta": s.eta,
            "T1_constant": self.T1_constant,
            "confidence_radius": self.radius,
            "containment": self.contained,
            "oracle_gap": self.oracle_gap,
            "pairwise_gap": self.pairwise_gap,
            "max_disagreement": float(np.max(dis)) if dis.size else 0.0,
            "gradient_bound": self.G,
            "disagreement_bound": self.bound,
            "beta": self.config.topology.beta,
            "diameter": self.config.topology.diameter,
            "truth": self.config.truth.to_dict(),
            "decomposition_gap": self.report.decomposition_gap(),
        }
        out.update(self.report.to_dict())
        if self.record.deviation is not None:
            dev = self.record.deviation[s.Ts - 1 :]
            out["max_deviation_omd"] = float(np.max(dev)) if dev.size else 0.0
        if self.record.common_owner is not None:
            out["common_owner"] = self.record.common_owner
        return out


def _streams(seed: int, m: int):
    root = np.random.SeedSequence(int(seed))
    scen, extra, *agents = root.spawn(2 + m)
    return (np.random.default_rng(scen), np.random.default_rng(extra), [np.random.default_rng(a) for a in agents])


def _losses(cfg: ExperimentConfig, T: int, rng: np.random.Generator) -> LossSequence:
    sc = cfg.scenario
    drift = sc["drift"]
    if cfg.mode == "nonconvex":
        gen = sc["generator"]
        return make_nonconvex_family(gen["lo"], gen["hi"], cfg.m, T, drift, rng, center=sc["target_center"],
                                     spread=float(sc["target_spread"]), margin=float(sc["target_margin"]),
                                     mirror=mirror_by_name(sc["mirror"]))
    return make_convex_tracking(cfg.truth, cfg.m, T, drift, rng, center=sc["target_center"],
                                spread=float(sc["target_spread"]), margin=float(sc["target_margin"]))


def _shrunk_comparator(trace: MinimizerTrace, cfg: ExperimentConfig, tau_in: float, tol: float) -> np.ndarray:
    shrunk = shrink_polytope(cfg.truth, tau_in, interior_hint=cfg.baseline)
    out = np.empty_like(trace.x_star)
    last = None
    for t, x in enumerate(trace.x_star):
        if last is None or not np.array_equal(x, last):
            y = project_polytope(shrunk, x, tol=tol)
            last = x
        out[t] = y
    return out


def _common_set_gradient_bound(record: RunRecord, seq: LossSequence, cfg: ExperimentConfig) -> float:
    """Gradient bound over a box holding both the true box and the shared set."""
    lo, hi = robust_bounding_box(record.safe_sets[0])
    lo = np.minimum(lo, seq.lo)
    hi = np.maximum(hi, seq.hi)
    s = record.schedule.Ts - 1
    targets = seq.targets[s:]
    if seq.mirror.is_identity:
        return box_vertex_distance(lo, hi, np.unique(targets.reshape(-1, seq.d), axis=0))
    return reparam_gradient_bound(targets, lo, hi)


@dataclass
class EstimationOutcome:
    T0: int
    T1: int
    T1_constant: float
    log: object
    estimates: np.ndarray  # (m, n, d) after EXTRA
    oracle: np.ndarray
    radius: float
    contained: bool
    extra_trace: list

    def safe_set_estimates(self, provenance: dict) -> list[SafeSetEstimate]:
        return [SafeSetEstimate(self.estimates[i], self.radius, i, provenance) for i in range(len(self.estimates))]


def exploration_length(cfg: ExperimentConfig, T: int) -> int:
    """⌈c0 T^{2/3}⌉, floored by the T0 sample-size rule unless overridden."""
    sch, est = cfg.schedule, cfg.estimation
    if sch["T0"] is not None:
        return int(sch["T0"])
    floor = 0
    if float(est["t0_factor"]) > 0:
        floor = t0_rule(cfg.L, cfg.m, cfg.gamma, cfg.sigma_zeta, cfg.truth.d, float(est["delta"]),
                        float(est["t0_factor"]))
    return max(int(math.ceil(float(sch["c0"]) * T ** (2.0 / 3.0))), floor)


def run_estimation(cfg: ExperimentConfig, seed: int) -> EstimationOutcome:
    """Exploration, EXTRA and the confidence radius for one master seed."""
    m, d, T = cfg.m, cfg.truth.d, cfg.T
    truth, topo, est = cfg.truth, cfg.topology, cfg.estimation
    lam, delta, rho, R = float(est["lambda"]), float(est["delta"]), float(est["rho"]), float(est["R"])
    _, extra_rng, agent_rngs = _streams(seed, m)
    phase = "exploration"
    try:
        T0 = exploration_length(cfg, T)
        ecfg = ExplorationConfig.from_truth(truth, cfg.baseline, T0, cfg.gamma, cfg.sigma_zeta)
        log = explore(ecfg, truth, m, R, agent_rngs, est["noise"])

        phase = "estimation"
        alpha = extra_step_size(log, lam, topo)
        A0 = extra_rng.standard_normal((m, truth.n, d))
        oracle = centralized_ridge(log, lam)
        if est["t1_constant"] is None:
            cal = calibrate_T1(log, topo, alpha, lam, T, rho, A0)
            T1, c1 = cal.T1, cal.constant
        else:
            c1 = float(est["t1_constant"])
            T1 = t1_from_constant(c1, rho, T)
        extra = extra_solve(log, topo, alpha, T1, lam, A0=A0, oracle=oracle)
        radius = confidence_radius(T, rho, R, d, m, T0, cfg.L, lam, delta, truth.n, cfg.gamma, cfg.sigma_zeta,
                                   truth.row_norm_bound)
    except SafeDOGDError as exc:
        raise PhaseError(phase, exc) from exc
    contained = containment(extra.estimates, truth, radius)
    return EstimationOutcome(T0, T1, c1, log, extra.estimates, oracle, radius, contained, extra.trace)


def run_single(cfg: ExperimentConfig, seed: int, trace_projections: bool = False, backend: str | None = None,
               shadow: bool = True) -> RunResult:
    """The full pipeline for one master seed."""
    T, truth, topo = cfg.T, cfg.truth, cfg.topology
    est, sch = cfg.estimation, cfg.schedule
    scen_rng, _, _ = _streams(seed, cfg.m)
    eo = run_estimation(cfg, seed)
    provenance = {"T0": eo.T0, "T1": eo.T1, "lambda": float(est["lambda"]), "delta": float(est["delta"]),
                  "rho": float(est["rho"])}
    estimates = eo.safe_set_estimates(provenance)

    phase = "scenario"
    try:
        seq = _losses(cfg, T, scen_rng)
        schedule = Schedule.preset(NONCONVEX if cfg.mode == "nonconvex" else "convex", T, eo.T1, topo.diameter,
                                   float(sch["c_eta"]), float(sch["c0"]), T0=eo.T0, eta=sch["eta"])
        scenario = Scenario(truth, cfg.baseline, seq, cfg.L, eo.log.actions, est["projection_mode"],
                            float(cfg.projection["tol"]), int(cfg.projection["max_iter"]))

        phase = "optimization"
        if cfg.mode == "nonconvex":
            record = run_d_safe_ogd_nonconvex(scenario, topo, schedule, estimates, shadow=shadow, backend=backend)
        else:
            record = run_d_safe_ogd_convex(scenario, topo, schedule, estimates, backend=backend)

        phase = "metrics"
        trace = minimizer_trace(seq, truth)
        shrunk_star = _shrunk_comparator(trace, cfg, 2.0 * eo.radius * cfg.L, 1e-12)
        report = compute_regret(record.actions, trace, seq, schedule.Ts, truth, shrunk_star)
        dis = record.disagreement()
        if cfg.mode == "nonconvex":
            G = _common_set_gradient_bound(record, seq, cfg)
            bound = disagreement_bound(schedule.eta, G, topo, scenario.tol)
        else:
            G, bound = seq.G, None
    except SafeDOGDError as exc:
        raise PhaseError(phase, exc) from exc

    rows = []
    if trace_projections:
        s = schedule.Ts
        for t in range(record.iterations.shape[0]):
            for i in range(cfg.m):
                rows.append((s + t, i, int(record.iterations[t, i]), float(record.residuals[t, i])))
    return RunResult(
        seed=int(seed), config=cfg, record=record, losses=seq, trace=trace, shrunk_star=shrunk_star,
        report=report, estimates=eo.estimates, radius=eo.radius, contained=eo.contained, T1_constant=eo.T1_constant,
        extra_trace=eo.extra_trace, oracle_gap=float(np.max(row_errors(eo.estimates, eo.oracle))),
        pairwise_gap=max_pairwise_row_gap(eo.estimates), disagreement=dis, G=float(G), bound=bound,
        projection_rows=rows,
    )


# ---------------------------------------------------------------------------
# artifacts
# ---------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "%.17g" % float(v)


def _csv(header: list[str], rows) -> str:
    buf = io.StringIO(newline="")
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(v if isinstance(v, str) else _fmt(v) for v in row) + "\n")
    return buf.getvalue()


def run_csv(result: RunResult) -> str:
    rec, seq = result.record, result.losses
    T, m, d = rec.actions.shape
    local = seq.local_losses(rec.actions)
    glob = seq.global_losses(rec.actions)
    slack = np.min(result.config.truth.b[None, None, :] - np.einsum("tid,kd->tik", rec.actions,
                                                                       result.config.truth.A), axis=2)
    feasible = (slack >= -1e-9).astype(int)
    header = ["t", "agent", "phase"] + [f"x_{j}" for j in range(d)] + [
        "local_loss", "global_loss", "feasible_true", "disagreement"]
    dev = rec.deviation
    if dev is not None:
        header.append("deviation_omd")

    def rows():
        for t in range(T):
            for i in range(m):
                row = [t + 1, i, PHASE_NAMES[rec.phase[t]], *rec.actions[t, i], local[t, i], glob[t, i],
                       int(feasible[t, i]), result.disagreement[t]]
                if dev is not None:
                    row.append("" if np.isnan(dev[t, i]) else _fmt(dev[t, i]))
                yield row

    return _csv(header, rows())


def minimizer_csv(result: RunResult) -> str:
    tr, seq = result.trace, result.losses
    cum = tr.cumulative()
    fstar = seq.global_losses(tr.x_star)
    ftilde = seq.global_losses(result.shrunk_star)
    d = tr.x_star.shape[1]
    header = ["t"] + [f"xstar_{j}" for j in range(d)] + [f"xtilde_{j}" for j in range(d)] + [
        "cumulative_path", "global_loss_star", "global_loss_shrunk"] + [f"target_mean_{j}" for j in range(d)] + [
        "target_spread"]
    return _csv(header, ([t + 1, *tr.x_star[t], *result.shrunk_star[t], cum[t], fstar[t], ftilde[t],
                          *seq.mean_targets[t], seq.spread[t]] for t in range(tr.T)))


def write_run(result: RunResult, out_dir) -> dict:
    """Write all artifacts of one run and return its manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "run.csv": run_csv(result),
        "minimizers.csv": minimizer_csv(result),
        "estimation.csv": _csv(["iteration", "agent", "frob_error_to_oracle", "pairwise_disagreement"],
                               result.extra_trace),
        "mixing.csv": _csv(["k", "agent", "deviation", "bound"], mixing_trace(result.config.topology, 30)),
        "summary.json": json.dumps(result.summary(), indent=2, sort_keys=True) + "\n",
    }
    if result.projection_rows:
        files["projections.csv"] = _csv(["t", "agent", "iterations", "residual"], result.projection_rows)
    digest = hashlib.sha256()
    for name in sorted(files):
        data = files[name].encode("utf-8")
        (out / name).write_bytes(data)
        digest.update(name.encode("utf-8") + b"\0" + data)
    manifest = {
        "config_hash": result.config.config_hash(),
        "seed": result.seed,
        "fingerprint": digest.hexdigest(),
        "files": sorted(files),
        "version": __version__,
        "backend": _backend.backend_name(),
    }
    (out / "manifest.json").write_bytes((json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode("utf-8"))
    (out / "config.json").write_bytes((json.dumps(result.config.raw, indent=2, sort_keys=True) + "\n").encode())
    return manifest


def run_seeds(cfg: ExperimentConfig, seeds, workers: int = 1, **kwargs) -> list[RunResult]:
    """Independent runs, one per seed, returned in seed order whatever the pool size."""
    seeds = [int(s) for s in seeds]
    if workers <= 1:
        return [run_single(cfg, s, **kwargs) for s in seeds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda s: run_single(cfg, s, **kwargs), seeds))


def run_experiment(cfg: ExperimentConfig, out_dir=None, workers: int | None = None,
                   trace_projections: bool = False) -> list[dict]:
    """Run every configured seed and write ``<out>/seed_<N>/`` artifact folders."""
    out = Path(out_dir if out_dir is not None else cfg.raw["output_dir"])
    workers = int(cfg.raw["workers"] if workers is None else workers)
    manifests = []

    def job(seed):
        res = run_single(cfg, seed, trace_projections=trace_projections)
        return res.summary(), write_run(res, out / f"seed_{seed}")

    if workers <= 1:
        outputs = [job(s) for s in cfg.seeds]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(job, cfg.seeds))
    for summary, manifest in outputs:
        manifests.append({"summary": summary, "manifest": manifest})
    return manifests


# ---------------------------------------------------------------------------
# scaling study
# ---------------------------------------------------------------------------


@dataclass
class StudyResult:
    rows: list[dict]
    exponents: dict

    def mean_regret(self, variant: str) -> dict[int, float]:
        by_T: dict[int, list[float]] = {}
        for r in self.rows:
            if r["variant"] == variant:
                by_T.setdefault(r["T"], []).append(r["regret"])
        return {T: float(np.mean(v)) for T, v in sorted(by_T.items())}


def scaling_study(cfg: ExperimentConfig, horizons, repeats: int, workers: int = 1,
                  variants: dict | None = None) -> StudyResult:
    """Mean regret per horizon and its fitted log-log exponent, per drift variant.

    By default the zero-drift variant always runs; the configured drift runs
    as a second 'drifting' variant when it is not 'none'.
    """
    horizons = [int(T) for T in horizons]
    if len(horizons) < 4 or any(b <= a for a, b in zip(horizons, horizons[1:])):
        raise ValueError("horizons must be strictly increasing with at least four values")
    if variants is None:
        variants = {"zero_drift": {"type": "none"}}
        if cfg.scenario["drift"].get("type", "none") != "none":
            variants["drifting"] = cfg.scenario["drift"]
    jobs = []
    for name, drift in variants.items():
        for T in horizons:
            sub = cfg.with_overrides(**{"scenario.T": T, "scenario.drift": drift})
            for seed in range(repeats):
                jobs.append((name, T, seed, sub))

    def one(job):
        name, T, seed, sub = job
        res = run_single(sub, seed, shadow=False)
        s = res.schedule
        reg = res.report.per_agent
        return {
            "variant": name,
            "T": T,
            "seed": seed,
            "regret": float(np.mean(reg)),
            "max_regret": float(np.max(reg)),
            "term_I": float(np.mean(res.report.term_I)),
            "path_length": res.report.path_length,
            "violations": res.report.violation_count,
            "containment": res.contained,
            "T0": s.T0,
            "T1": s.T1,
        }

    if workers <= 1:
        rows = [one(j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(one, jobs))
    result = StudyResult(rows, {})
    for name in variants:
        means = result.mean_regret(name)
        result.exponents[name] = fit_exponent(list(means), list(means.values())).to_dict()
    return result


def study_csv(study: StudyResult) -> str:
    header = ["variant", "T", "seed", "regret", "max_regret", "term_I", "path_length", "violations",
              "containment", "T0", "T1"]
    return _csv(header, ([r[k] if not isinstance(r[k], bool) else int(r[k]) for k in header] for r in study.rows))


# ---------------------------------------------------------------------------
# audit of saved runs
# ---------------------------------------------------------------------------


@dataclass
class AuditReport:
    violations: int
    worst_slack: float
    regret: list[float]
    summary_regret: list[float]

    @property
    def consistent(self) -> bool:
        return all(abs(a - b) <= 1e-9 * max(1.0, abs(b)) for a, b in zip(self.regret, self.summary_regret))


def audit_run(run_dir) -> AuditReport:
    """Recompute violations and per-agent regret from a run folder's actions.

    Global losses are rebuilt from the saved actions, the per-round mean
    target and spread, so an edited action changes the audited regret.
    """
    run_dir = Path(run_dir)
    summary = json.loads((run_dir / "summary.json").read_text(encoding="utf-8"))
    raw = json.loads((run_dir / "config.json").read_text(encoding="utf-8"))
    mirror = mirror_by_name(raw["scenario"].get("mirror", "entropy")) if raw.get("mode") == "nonconvex" \
        else IDENTITY
    truth = Polytope.from_dict(summary["truth"])
    runs = np.genfromtxt(run_dir / "run.csv", delimiter=",", names=True, dtype=None, encoding="utf-8")
    mins = np.genfromtxt(run_dir / "minimizers.csv", delimiter=",", names=True, dtype=None, encoding="utf-8")
    d = truth.d
    X = np.column_stack([runs[f"x_{j}"] for j in range(d)]).astype(float)
    slack = np.min(truth.b[None, :] - X @ truth.A.T, axis=1)
    agents = runs["agent"].astype(int)
    m = int(agents.max()) + 1
    t_idx = runs["t"].astype(int) - 1
    mean = np.atleast_2d(np.column_stack([np.atleast_1d(mins[f"target_mean_{j}"]) for j in range(d)]))
    spread = np.atleast_1d(mins["target_spread"]).astype(float)
    fstar = np.atleast_1d(mins["global_loss_star"]).astype(float)
    r = mirror.q(X) - mean[t_idx]
    F = 0.5 * m * np.sum(r * r, axis=1) + spread[t_idx]
    gap = F - fstar[t_idx]
    regret = [math.fsum(gap[agents == j]) for j in range(m)]
    return AuditReport(int(np.sum(slack < -1e-9)), float(np.min(slack)), regret, summary["regret"])
