"""Command line entry point: ``run``, ``study`` and ``audit``.

Exit codes: 0 success, 2 configuration error, 3 runtime divergence or
solver failure, 4 safety violation detected.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import load_config
from .errors import ConfigError, SafeDOGDError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_UNSAFE = 4


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="safe-dogd", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run every configured seed and write artifacts")
    run.add_argument("--config", required=True, help="experiment JSON file")
    run.add_argument("--seed", type=int, help="run only this master seed")
    run.add_argument("--out", help="output directory (default: config output_dir)")
    run.add_argument("--mode", choices=("convex", "nonconvex"), help="override the config mode")
    run.add_argument("--workers", type=int, help="parallel seeds (default: config workers)")
    run.add_argument("--trace-projections", action="store_true", help="write per-projection iteration counts")

    study = sub.add_parser("study", help="regret scaling over horizons")
    study.add_argument("--config", required=True)
    study.add_argument("--horizons", required=True, help="comma separated, e.g. 2000,4000,8000,16000")
    study.add_argument("--repeats", type=int, required=True, help="seeds per horizon")
    study.add_argument("--out", help="directory for study.csv and exponents.json")
    study.add_argument("--workers", type=int, default=1)

    audit = sub.add_parser("audit", help="recheck a saved run folder")
    audit.add_argument("--run", required=True, help="a seed_<N> folder written by 'run'")
    return p


def _cmd_run(args) -> int:
    from .experiment import run_experiment

    cfg = load_config(args.config)
    changes = {}
    if args.seed is not None:
        changes["seeds"] = [args.seed]
    if args.mode is not None:
        changes["mode"] = args.mode
    if changes:
        cfg = cfg.with_overrides(**changes)
    results = run_experiment(cfg, args.out, args.workers, args.trace_projections)
    unsafe = 0
    for item in results:
        s = item["summary"]
        unsafe += s["violation_count"]
        print(
            f"seed {s['seed']}: regret/agent max {max(s['regret']):.6g}  C_T* {s['path_length']:.6g}  "
            f"violations {s['violation_count']}  max disagreement {s['max_disagreement']:.3g}  "
            f"containment {s['containment']}"
        )
    return EXIT_UNSAFE if unsafe else EXIT_OK


def _cmd_study(args) -> int:
    from .experiment import scaling_study, study_csv

    cfg = load_config(args.config)
    try:
        horizons = [int(h) for h in args.horizons.split(",") if h.strip()]
    except ValueError:
        raise ConfigError("--horizons must be a comma separated list of integers") from None
    try:
        study = scaling_study(cfg, horizons, args.repeats, args.workers)
    except ValueError as exc:
        if isinstance(exc, SafeDOGDError):
            raise
        raise ConfigError(str(exc)) from exc
    for name, fit in study.exponents.items():
        print(f"{name}: exponent {fit['slope']:.3f}  95% CI [{fit['ci_low']:.3f}, {fit['ci_high']:.3f}]")
        for T, reg in study.mean_regret(name).items():
            print(f"  T={T}: mean regret {reg:.6g}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "study.csv").write_text(study_csv(study), encoding="utf-8", newline="\n")
        (out / "exponents.json").write_text(json.dumps(study.exponents, indent=2, sort_keys=True) + "\n",
                                            encoding="utf-8", newline="\n")
    unsafe = sum(r["violations"] for r in study.rows)
    return EXIT_UNSAFE if unsafe else EXIT_OK


def _cmd_audit(args) -> int:
    from .experiment import audit_run

    try:
        rep = audit_run(args.run)
    except (OSError, KeyError, ValueError) as exc:
        raise ConfigError(f"cannot audit {args.run}: {exc}") from exc
    print(f"violations {rep.violations}  worst slack {rep.worst_slack:.3e}  "
          f"regret reproduced {'yes' if rep.consistent else 'NO'}")
    if rep.violations:
        return EXIT_UNSAFE
    return EXIT_OK if rep.consistent else EXIT_RUNTIME


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    handler = {"run": _cmd_run, "study": _cmd_study, "audit": _cmd_audit}[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SafeDOGDError as exc:
        cause = getattr(exc, "cause", exc)
        if isinstance(cause, ConfigError):
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
