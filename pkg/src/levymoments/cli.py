"""Batch front end: process specs in, reports and comma-separated tables out.

Subcommands::

    levymoments psi --spec bm.yaml
    levymoments check plan.yaml [--spec ...] [--seed ...]
    levymoments simulate --spec poisson.yaml --paths 1000
    levymoments lattice --spec poisson.yaml --beta 6.283185307179586
    levymoments transience --spec drifted.yaml --lo 0.5 --hi 10

Output goes to ``--out``, else $LEVYMOMENTS_OUT, else ./levymoments-out.
Exit status: 0 when every verdict is pass (or inconclusive, or an annotated
expected failure), 1 on any other failure, 2 on bad input.
"""
from __future__ import annotations

import argparse
import csv
import io
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from . import verify as V
from .measure import MeasureError
from .simulate import SimConfig, SimulationError, sample_paths
from .specdoc import SpecError, function_from_spec, load_process, parse_process, rule_from_spec, weight_from_spec
from .triplet import MomentCriterionError, eval_psi_many

ENV_OUT = "LEVYMOMENTS_OUT"
DEFAULT_OUT = "levymoments-out"
CHECKS = ("psi", "moments", "ui", "dynkin", "gronwall", "semigroup", "lattice", "transience")
SUMMARY_FIELDS = ("id", "verdict", "value", "se", "seed", "flag", "expected", "status")
# checks that read the shared ensemble
ENSEMBLE_CHECKS = ("moments", "ui", "dynkin")


@dataclass
class RunPlan:
    spec: Any  # path or inline mapping
    checks: list
    weight: Any = "exp:1"
    sim: dict = field(default_factory=dict)
    out: Optional[str] = None
    seed: int = 0
    allow_inconclusive: bool = True
    jobs: int = 2

    def __post_init__(self):
        items = []
        for i, c in enumerate(self.checks):
            c = {"check": c} if isinstance(c, str) else dict(c)
            name = c.get("check")
            if name not in CHECKS:
                raise SpecError(f"unknown check {name!r}; expected one of {', '.join(CHECKS)}", f"checks[{i}]")
            c.setdefault("id", name if all(
                (x if isinstance(x, str) else x.get("check")) != name for x in self.checks[:i]) else f"{name}{i}")
            exp = c.get("expect", "pass")
            if exp not in ("pass", "fail"):
                raise SpecError("expect must be pass or fail", f"checks[{i}].expect")
            items.append(c)
        self.checks = items


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.17e}"
    return str(x)


def load_plan(path, overrides: dict) -> RunPlan:
    p = Path(path)
    try:
        data = yaml.safe_load(p.read_text())
    except OSError as exc:
        raise SpecError(f"cannot read {p}: {exc.strerror}") from None
    except yaml.MarkedYAMLError as exc:
        raise SpecError(str(exc.problem), line=exc.problem_mark.line + 1) from None
    if not isinstance(data, dict):
        raise SpecError("a plan is a mapping")
    unknown = set(data) - {"process", "checks", "weight", "sim", "seed", "allow_inconclusive", "jobs"}
    if unknown:
        raise SpecError(f"unknown plan field {sorted(unknown)[0]!r}", sorted(unknown)[0])
    spec = data.get("process")
    if isinstance(spec, str) and not os.path.isabs(spec):
        spec = str(p.parent / spec)
    plan = RunPlan(spec=spec, checks=data.get("checks") or [], weight=data.get("weight", "exp:1"),
                   sim=dict(data.get("sim") or {}), seed=int(data.get("seed", 0)),
                   allow_inconclusive=bool(data.get("allow_inconclusive", True)), jobs=int(data.get("jobs", 2)))
    return _apply_overrides(plan, overrides)


def _apply_overrides(plan: RunPlan, ov: dict) -> RunPlan:
    sim = dict(plan.sim)
    for key, name in (("paths", "N"), ("dt", "dt"), ("delta", "delta")):
        if ov.get(key) is not None:
            sim[name] = ov[key]
    changes = {"sim": sim}
    if ov.get("spec") is not None:
        changes["spec"] = ov["spec"]
    if ov.get("seed") is not None:
        changes["seed"] = ov["seed"]
    if ov.get("out") is not None:
        changes["out"] = ov["out"]
    return replace(plan, **changes) if changes else plan


def _triplet(spec):
    if spec is None:
        raise SpecError("no process spec given (use --spec or the plan's process field)")
    if isinstance(spec, dict):
        return parse_process(yaml.safe_dump(spec))
    return load_process(spec)


def _sim_config(plan: RunPlan, T: float) -> SimConfig:
    s = plan.sim
    dt = s.get("dt", T / 128)
    return SimConfig(T=T, dt=dt, N=int(s.get("N", 100_000)), delta=float(s.get("delta", 0.1)),
                     mode=s.get("mode", "gaussian_approx"), seed=plan.seed, workers=int(s.get("workers", 1)))


def _psi_report(triplet, c, seed, out: Path):
    lo, hi, n = float(c.get("xi_min", -10.0)), float(c.get("xi_max", 10.0)), int(c.get("count", 201))
    xi = np.linspace(lo, hi, n)
    vals = eval_psi_many(triplet, [[x] for x in xi])
    with open(out / f"{c['id']}.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["xi", "re_psi", "im_psi"])
        for x, v in zip(xi, vals):
            w.writerow([_fmt(x), _fmt(v.real), _fmt(v.imag)])
    ok = bool(np.all(vals.real >= -1e-9 * np.maximum(1.0, np.abs(vals))))
    est = {"psi_at_xi_max": V.Estimate(float(vals[-1].real), 0.0, 0)}
    return V.VerificationReport("psi", V.inputs_digest(triplet, xi), est, {"re_psi_min": 0.0},
                                "pass" if ok else "fail", seed, {"table": f"{c['id']}.csv"})


def _run_check(c: dict, plan: RunPlan, triplet, g, ensemble_for, out: Path) -> V.VerificationReport:
    name = c["check"]
    t = float(c.get("t", plan.sim.get("T", 1.0)))
    gw = weight_from_spec(c["weight"]) if "weight" in c else g
    if name == "psi":
        return _psi_report(triplet, c, plan.seed, out)
    if name == "moments":
        ens = ensemble_for(t)
        a = V.mc_moment(ens, gw, t)
        b = V.sup_moment(ens, gw, t)
        verdict = "pass" if a.finite and b.finite else "fail"
        flag = "finite" if verdict == "pass" else "diverging"
        return V.VerificationReport("moments", V.inputs_digest(triplet, gw, t), {"moment": a, "running_sup": b},
                                    {"caps": V.CAP_LADDER[-1]}, verdict, plan.seed, {"flag": flag})
    if name == "ui":
        ens = ensemble_for(t)
        return V.ui_profile(ens, gw, t).report
    if name == "dynkin":
        ens = ensemble_for(t)
        u = function_from_spec(c.get("u", "bump"))
        rule = rule_from_spec(c.get("rule"), t, gw)
        return V.dynkin_residual(triplet, u, rule, t, ensemble=ens)[1]
    if name == "gronwall":
        T = float(c.get("T", t))
        fit = V.gronwall_growth(triplet, gw, T, cfg=_sim_config(plan, T), doubling_T=c.get("doubling_T"))
        return fit.report
    if name == "semigroup":
        phi = function_from_spec(c.get("phi", "bump"))
        times = [float(x) for x in c.get("times", [1e-3, 0.1, 1.0])]
        s = plan.sim
        return V.semigroup_continuity(triplet, phi, gw, times, N=int(s.get("N", 100_000)), seed=plan.seed,
                                      delta=float(s.get("delta", 0.1)), mode=s.get("mode", "gaussian_approx")).report
    if name == "lattice":
        beta = float(c.get("beta", 2 * math.pi))
        cfg = replace(_sim_config(plan, t), dt=t / 8)
        return V.lattice_detect(triplet, beta, cfg=cfg, t=t).report
    if name == "transience":
        lo, hi = c.get("interval", [0.01, 10.0])
        T = float(c.get("T", 1.0))
        return V.transience_probe(triplet, (float(lo), float(hi)), cfg=replace(_sim_config(plan, T), dt=T / 64),
                                  check_times=(T / 4, T / 2, T)).report
    raise SpecError(f"unknown check {name!r}")


def run(plan: RunPlan) -> int:
    """Run every check of the plan, write one report per check and summary.csv."""
    out = Path(plan.out or os.environ.get(ENV_OUT) or DEFAULT_OUT)
    out.mkdir(parents=True, exist_ok=True)
    triplet = _triplet(plan.spec)
    g = weight_from_spec(plan.weight)
    shared = {}

    horizons = [float(c.get("t", plan.sim.get("T", 1.0))) for c in plan.checks if c["check"] in ENSEMBLE_CHECKS]
    if horizons:
        # one ensemble on the longest horizon serves every ensemble check
        T = max(horizons)
        shared["ens"] = sample_paths(triplet, _sim_config(plan, T))

    def ensemble_for(t):
        return shared["ens"]

    def job(c):
        try:
            return _run_check(c, plan, triplet, g, ensemble_for, out), None
        except (MomentCriterionError, V.VerificationError, SimulationError, MeasureError, SpecError) as exc:
            return None, f"{type(exc).__name__}: {exc}"

    with ThreadPoolExecutor(max_workers=max(1, plan.jobs)) as pool:
        results = list(pool.map(job, plan.checks))

    rows = []
    worst = 0
    for c, (rep, err) in zip(plan.checks, results):
        expected = c.get("expect", "pass")
        if rep is None:
            verdict, value, se, flag = "fail", math.nan, math.nan, "error"
            (out / f"{c['id']}.txt").write_text(f"check: {c['check']}\nverdict: fail\nseed: {plan.seed}\nerror: {err}\n")
        else:
            (out / f"{c['id']}.txt").write_text(rep.to_text())
            row = rep.summary_row(c["id"])
            verdict, value, se = row["verdict"], row["value"], row["se"]
            flag = rep.notes.get("flag", "")
        if verdict == "pass" or (verdict == "inconclusive" and plan.allow_inconclusive):
            status = "ok" if expected == "pass" else "unexpected-pass"
        else:
            status = "expected-fail" if expected == "fail" else "failed"
        if status in ("failed", "unexpected-pass"):
            worst = 1
        rows.append({"id": c["id"], "verdict": verdict, "value": value, "se": se, "seed": plan.seed,
                     "flag": flag, "expected": expected, "status": status})
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=SUMMARY_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _fmt(v) for k, v in r.items()})
    (out / "summary.csv").write_text(buf.getvalue())
    sys.stdout.write(buf.getvalue())
    return worst


# ---------------------------------------------------------------- argparse


def _common(p: argparse.ArgumentParser, spec_required: bool = True) -> None:
    p.add_argument("--spec", required=spec_required, help="process spec (YAML)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--paths", type=int, default=None, help="number of simulated paths")
    p.add_argument("--dt", type=float, default=None, help="simulation grid step")
    p.add_argument("--delta", type=float, default=None, help="small-jump truncation radius")
    p.add_argument("--out", default=None, help=f"output directory (default ${ENV_OUT} or ./{DEFAULT_OUT})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="levymoments", description="Generalized moments of Lévy processes.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("psi", help="tabulate the characteristic exponent")
    _common(p)
    p.add_argument("--xi-min", type=float, default=-10.0)
    p.add_argument("--xi-max", type=float, default=10.0)
    p.add_argument("--count", type=int, default=201)

    p = sub.add_parser("check", help="run a plan")
    p.add_argument("plan", nargs="?", help="plan document (YAML)")
    _common(p, spec_required=False)
    p.add_argument("--checks", default=None, help="comma-separated checks when no plan is given")
    p.add_argument("--weight", default=None, help="weight, e.g. exp:1 or poly:3")
    p.add_argument("--expect-fail", default="", help="comma-separated checks annotated as expected failures")
    p.add_argument("--jobs", type=int, default=None)

    p = sub.add_parser("simulate", help="simulate and dump an ensemble")
    _common(p)
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--mode", default="gaussian_approx")

    p = sub.add_parser("lattice", help="lattice detection")
    _common(p)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--t", type=float, default=1.0)

    p = sub.add_parser("transience", help="cumulant root search and martingale check")
    _common(p)
    p.add_argument("--lo", type=float, default=0.01)
    p.add_argument("--hi", type=float, default=10.0)
    return parser


def _single(args, check: dict) -> RunPlan:
    plan = RunPlan(spec=args.spec, checks=[check], seed=args.seed or 0, jobs=1)
    return _apply_overrides(plan, vars(args))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "psi":
            return run(_single(args, {"check": "psi", "xi_min": args.xi_min, "xi_max": args.xi_max,
                                      "count": args.count}))
        if args.command == "lattice":
            return run(_single(args, {"check": "lattice", "beta": args.beta, "t": args.t}))
        if args.command == "transience":
            return run(_single(args, {"check": "transience", "interval": [args.lo, args.hi]}))
        if args.command == "simulate":
            triplet = _triplet(args.spec)
            plan = _single(args, {"check": "psi"})
            cfg = replace(_sim_config(plan, args.T), mode=args.mode, dt=args.dt or args.T / 128)
            out = Path(plan.out or os.environ.get(ENV_OUT) or DEFAULT_OUT)
            out.mkdir(parents=True, exist_ok=True)
            ens = sample_paths(triplet, cfg)
            ens.dump(out / "ensemble.csv")
            sys.stdout.write(f"{out / 'ensemble.csv'} sha256={ens.digest()}\n")
            return 0
        # check
        if args.plan:
            plan = load_plan(args.plan, vars(args))
        else:
            if not args.checks:
                raise SpecError("give a plan file or --checks")
            fails = {x for x in args.expect_fail.split(",") if x}
            checks = [{"check": c, "expect": "fail" if c in fails else "pass"} for c in args.checks.split(",")]
            plan = _apply_overrides(RunPlan(spec=args.spec, checks=checks, seed=args.seed or 0), vars(args))
        if args.weight:
            plan = replace(plan, weight=args.weight)
        if args.jobs:
            plan = replace(plan, jobs=args.jobs)
        return run(plan)
    except (SpecError, MeasureError, SimulationError) as exc:
        sys.stderr.write(f"levymoments: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
