"""Monte Carlo estimators and pass/fail certificates for the moment theory.

Every check returns plain numbers (an :class:`Estimate` or a small result
object) together with a :class:`VerificationReport`.  Equality-type checks
use 3-SE margins and residual checks 4-SE margins.  Divergence can never be
proved by simulation; it is operationalized by capped-mean ladders.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Optional, Sequence

import numpy as np
from scipy import optimize, signal

from .generator import (
    C2Function, GeneratorTable, adjoint_weighted_norm, from_weight, generator_bound_constants,
)
from .measure import LevyMeasure
from .quadrature import mapped_rule
from .simulate import (
    PathEnsemble, SimConfig, StoppingRule, evaluate_stopping_many, running_sup_g, sample_paths,
    time_integral,
)
from .triplet import (
    LevyTriplet, MomentCriterionError, eval_cumulant, eval_psi, jump_moment_criterion,
)
from .weights import Mollifier, WeightFunction, exp_beta, mollify

CAP_LADDER = (1e2, 1e4, 1e6, 1e8)
EQ_SE = 3.0
RESID_SE = 4.0
DISC_C = 2.0
UI_RADII = (1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0)
UI_ETA = 1e-2
LATTICE_TOL = 1e-10
VERDICTS = ("pass", "fail", "inconclusive")


class VerificationError(ValueError):
    pass


class LatticePreconditionError(VerificationError):
    """|E e^{iβX}| is not 1, so X cannot live on a lattice of span 2π/β."""


@dataclass(frozen=True)
class Estimate:
    value: float
    std_error: float
    N: int
    flag: str = "finite"
    details: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not self.std_error >= 0:
            raise VerificationError(f"standard error must be non-negative, got {self.std_error}")
        if self.flag not in ("finite", "diverging"):
            raise VerificationError(f"unknown flag {self.flag!r}")

    @property
    def finite(self) -> bool:
        return self.flag == "finite"


@dataclass(frozen=True)
class VerificationReport:
    check: str
    digest: str
    estimates: Mapping[str, Estimate]
    thresholds: Mapping[str, float]
    verdict: str
    seed: Optional[int] = None
    notes: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.verdict not in VERDICTS:
            raise VerificationError(f"unknown verdict {self.verdict!r}")

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def to_text(self) -> str:
        lines = [f"check: {self.check}", f"verdict: {self.verdict}", f"seed: {self.seed}",
                 f"inputs_sha256: {self.digest}"]
        for name, est in self.estimates.items():
            lines.append(f"estimate.{name}: value={est.value:.17e} se={est.std_error:.17e} "
                         f"N={est.N} flag={est.flag}")
        for name, val in self.thresholds.items():
            lines.append(f"threshold.{name}: {float(val):.17e}")
        for name, val in self.notes.items():
            lines.append(f"note.{name}: {val}")
        return "\n".join(lines) + "\n"

    def summary_row(self, label: Optional[str] = None) -> dict:
        main = next(iter(self.estimates.values()), None)
        return {
            "id": label or self.check,
            "verdict": self.verdict,
            "value": math.nan if main is None else main.value,
            "se": math.nan if main is None else main.std_error,
            "seed": self.seed,
        }


# ---------------------------------------------------------------- helpers


def inputs_digest(*parts) -> str:
    h = hashlib.sha256()
    for p in parts:
        if isinstance(p, LevyTriplet):
            h.update(p.b.tobytes())
            h.update(p.Q.tobytes())
            h.update(repr(p.nu).encode())
        elif isinstance(p, WeightFunction):
            h.update(f"{p.family}{dict(p.params)}{p.c}".encode())
        elif isinstance(p, C2Function):
            h.update(f"{p.name}{p.center}{p.support_radius}".encode())
        elif isinstance(p, StoppingRule):
            h.update(p.label.encode())
        elif isinstance(p, np.ndarray):
            h.update(p.tobytes())
        else:
            h.update(repr(p).encode())
    return h.hexdigest()


def mean_se(values) -> tuple[float, float]:
    """Sample mean and its standard error with compensated summation."""
    v = np.asarray(values, dtype=float).ravel()
    n = v.size
    if n == 0:
        return math.nan, math.nan
    if not np.all(np.isfinite(v)):
        return math.inf, math.inf
    if v.min() == v.max():
        return float(v[0]), 0.0
    m = math.fsum(v) / n
    if n == 1:
        return m, 0.0
    var = math.fsum((v - m) ** 2) / (n - 1)
    return m, math.sqrt(var / n)


def capped_ladder(values, caps: Sequence[float] = CAP_LADDER) -> Estimate:
    """E[min(V, n)] along the caps; diverging when the top increment is
    significant (> 3 SE) and no smaller than the one before it."""
    v = np.asarray(values, dtype=float).ravel()
    v = np.where(np.isnan(v), np.inf, v)
    means, ses, incs, inc_ses = [], [], [], []
    prev = None
    for n in caps:
        c = np.minimum(v, n)
        m, s = mean_se(c)
        means.append(m)
        ses.append(s)
        if prev is not None:
            dm, ds = mean_se(c - prev)
            incs.append(dm)
            inc_ses.append(ds)
        prev = c
    top, top_se = incs[-1], inc_ses[-1]
    diverging = top > EQ_SE * top_se and top >= incs[-2]
    details = {"caps": list(caps), "capped_means": means, "capped_se": ses,
               "increments": incs, "increment_se": inc_ses}
    if diverging:
        return Estimate(means[-1], ses[-1], v.size, "diverging", details)
    m, s = mean_se(v)
    return Estimate(m, s, v.size, "finite", details)


def _report(check, digest, estimates, thresholds, verdict, seed, **notes) -> VerificationReport:
    return VerificationReport(check, digest, estimates, thresholds, verdict, seed, notes)


def _default_config(T: float, N: int = 100_000, seed: int = 0, dt: Optional[float] = None) -> SimConfig:
    return SimConfig(T=T, dt=dt if dt is not None else T / 128, N=N, seed=seed)


# ---------------------------------------------------------------- moments


def mc_moment(ensemble: PathEnsemble, g: WeightFunction, t: float) -> Estimate:
    """E[g(X_t)] with the capped-mean divergence ladder."""
    return capped_ladder(g(ensemble.state_at(t)))


def sup_moment(ensemble: PathEnsemble, g: WeightFunction, t: float) -> Estimate:
    """E[sup_{s<=t} g(X_s)] with the same ladder."""
    tracks = running_sup_g(ensemble, g)
    return capped_ladder(tracks.sup_g[:, ensemble.index_of(t)])


def default_rules(g: WeightFunction, t: float) -> list[StoppingRule]:
    """The adversarial family: fixed time, exit balls, g-level crossings and a composition."""
    rules = [StoppingRule.deterministic(t)]
    rules += [StoppingRule.exit_ball(r, t) for r in (0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0)]
    e1 = np.zeros((1, g.dim))
    e1[0, 0] = 1.0
    lv = [float(g(r * e1)[0]) for r in (3.0, 6.0)]
    rules += [StoppingRule.level_g(lv[0], g, t), StoppingRule.level_g(lv[1], g, t)]
    rules.append(StoppingRule.compose([StoppingRule.exit_ball(2.0, t), StoppingRule.level_g(lv[1], g, t)], t))
    return rules


@dataclass(frozen=True)
class UIProfile:
    levels: np.ndarray
    curve: np.ndarray
    curve_se: np.ndarray
    lower_bound: np.ndarray
    verdict: str
    eta: float
    dominated: bool
    report: VerificationReport


def ui_profile(ensemble: PathEnsemble, g: WeightFunction, t: float,
               rules: Optional[Sequence[StoppingRule]] = None, radii: Sequence[float] = UI_RADII,
               eta: float = UI_ETA, levels: Optional[Sequence[float]] = None) -> UIProfile:
    """Tail curve R -> max_rule E[g(X_{σ∧t}) 1{g(X_{σ∧t}) >= R}].

    Levels are R = g(r e_1) over ``radii`` (geometric levels for non-radial
    g).  Verdict at the largest level: pass if curve + 3 SE < eta, fail if the
    count lower bound R (k - 3 sqrt k) / N exceeds eta, inconclusive otherwise.
    The rule family is finite, so the curve is a lower bound on the sup over
    all stopping times.
    """
    rules = list(rules) if rules is not None else default_rules(g, t)
    for r in rules:
        if r.cap > t * (1 + 1e-12):
            raise VerificationError(f"rule {r.label} is not capped at t={t}")
    if levels is not None:
        levels = np.sort(np.asarray(levels, dtype=float))
    elif g.profile is not None:
        e1 = np.zeros((len(radii), g.dim))
        e1[:, 0] = radii
        levels = np.asarray(g(e1), dtype=float)
    else:
        levels = np.logspace(1, 8, 8)
    stopped = evaluate_stopping_many(ensemble, rules)
    N = ensemble.N
    curve = np.zeros(levels.size)
    curve_se = np.zeros(levels.size)
    lower = np.zeros(levels.size)
    sup_track = running_sup_g(ensemble, g).sup_g[:, ensemble.index_of(t)]
    dominated = True
    per_rule = []
    with np.errstate(over="ignore", invalid="ignore"):
        for rule, st in zip(rules, stopped):
            gv = np.asarray(g(st.states), dtype=float)
            row = []
            for j, R in enumerate(levels):
                hit = gv >= R
                m, s = mean_se(np.where(hit, gv, 0.0))
                k = int(hit.sum())
                lb = R * (k - EQ_SE * math.sqrt(k)) / N
                row.append(m)
                if m > curve[j] or (m == curve[j] and s > curve_se[j]):
                    curve[j], curve_se[j] = m, s
                lower[j] = max(lower[j], lb)
            per_rule.append(row)
            if np.all(np.isfinite(gv)) and np.all(np.isfinite(sup_track)):
                dm, ds = mean_se(gv - sup_track)
                if dm > EQ_SE * ds + 1e-12 * max(1.0, abs(float(np.mean(sup_track)))):
                    dominated = False
    top, top_se = curve[-1], curve_se[-1]
    if top + EQ_SE * top_se < eta:
        verdict = "pass"
    elif lower[-1] > eta:
        verdict = "fail"
    else:
        verdict = "inconclusive"
    rep = _report(
        "ui_profile", inputs_digest(ensemble.source, g, t, *rules), {
            "tail_at_top": Estimate(float(top), float(top_se), N),
        }, {"eta": eta, "top_level": float(levels[-1]), "margin_se": EQ_SE},
        verdict, ensemble.config.seed, rules=[r.label for r in rules], dominated=dominated,
        family="finite adversarial family; the curve is a lower bound on the sup over all stopping times",
    )
    return UIProfile(levels, curve, curve_se, lower, verdict, eta, dominated, rep)


# ---------------------------------------------------------------- Dynkin


def _cap_rule(rule: StoppingRule, t: float) -> StoppingRule:
    return rule if rule.cap <= t else StoppingRule.compose([rule], t)


def _state_range(ensemble: PathEnsemble) -> tuple[float, float]:
    lo = min(float(ensemble.states.min()), float((ensemble.jump_left + ensemble.jump_size).min(initial=0.0)),
             float(ensemble.jump_left.min(initial=0.0)))
    hi = max(float(ensemble.states.max()), float((ensemble.jump_left + ensemble.jump_size).max(initial=0.0)),
             float(ensemble.jump_left.max(initial=0.0)))
    return lo, hi


def generator_table(triplet: LevyTriplet, u: C2Function, ensemble: PathEnsemble, core: Optional[float] = None,
                    step: float = 2e-2, limit: Optional[float] = None) -> GeneratorTable:
    """Au tabulated over everything the ensemble visits (d = 1)."""
    lo, hi = _state_range(ensemble)
    if limit is not None:
        lo, hi = max(lo, -limit), min(hi, limit)
    if core is None:
        c = abs(u.center[0]) if u.center else 0.0
        core = max(c + (u.support_radius if u.compact else 0.0) + 2.0, 4.0)
    return GeneratorTable.covering(triplet, u, lo - step, hi + step, core, step=step)


def dynkin_residual(triplet: LevyTriplet, u: C2Function, rule: StoppingRule, t: float,
                    ensemble: Optional[PathEnsemble] = None, cfg: Optional[SimConfig] = None,
                    table: Optional[GeneratorTable] = None) -> tuple[Estimate, VerificationReport]:
    """E[u(X_{σ∧t})] - u(0) - E[∫_0^{σ∧t} Au(X_s) ds] and its 4-SE verdict.

    The discretization budget is DISC_C · Δt · sup|Au| over the table.
    """
    if not u.compact:
        raise VerificationError("Dynkin checks need a compactly supported u")
    if t == 0:
        est = Estimate(0.0, 0.0, 0)
        return est, _report("dynkin_residual", inputs_digest(triplet, u, rule, t), {"residual": est},
                            {"budget": 0.0}, "pass", None)
    if ensemble is None:
        ensemble = sample_paths(triplet, cfg or _default_config(t))
    rule = _cap_rule(rule, t)
    stopped = evaluate_stopping_many(ensemble, [rule])[0]
    if table is None:
        table = generator_table(triplet, u, ensemble)
    u0 = float(u(np.zeros((1, triplet.dim)))[0])
    integral = time_integral(ensemble, lambda x: table(x[:, 0]), stopped.times)
    resid = u(stopped.states) - u0 - integral
    m, s = mean_se(resid)
    budget = DISC_C * ensemble.dt * table.sup_abs
    verdict = "pass" if abs(m) <= RESID_SE * s + budget else "fail"
    lhs_m, lhs_s = mean_se(u(stopped.states))
    est = Estimate(m, s, ensemble.N, details={"budget": budget})
    rep = _report("dynkin_residual", inputs_digest(triplet, u, rule, t), {
        "residual": est, "E_u_stopped": Estimate(lhs_m, lhs_s, ensemble.N),
    }, {"budget": budget, "margin_se": RESID_SE}, verdict, ensemble.config.seed, rule=rule.label)
    return est, rep


def dynkin_inequality_check(triplet: LevyTriplet, g_eps: WeightFunction, rule: StoppingRule, t: float,
                            ensemble: Optional[PathEnsemble] = None, cfg: Optional[SimConfig] = None,
                            table: Optional[GeneratorTable] = None) -> VerificationReport:
    """E[g(X_{t∧σ})] <= g(0) + E[∫_0^{t∧σ} |Ag(X_s)| ds] for a smooth weight g."""
    if not g_eps.smooth or g_eps.grad is None or g_eps.hess is None:
        raise VerificationError("the inequality check needs a smooth weight with derivatives")
    base = g_eps.base if g_eps.base is not None else g_eps
    crit = jump_moment_criterion(triplet.nu, base)
    if not crit.finite:
        raise MomentCriterionError("∫_{|y|>=1} g dν is infinite")
    if ensemble is None:
        ensemble = sample_paths(triplet, cfg or _default_config(t))
    rule = _cap_rule(rule, t)
    stopped = evaluate_stopping_many(ensemble, [rule])[0]
    u = from_weight(g_eps)
    if table is None:
        lo, hi = _stopped_range(ensemble, stopped.times)
        table = GeneratorTable.covering(triplet, u, lo - 0.05, hi + 0.05, core=4.0, step=0.05)
    g0 = float(g_eps(np.zeros((1, triplet.dim)))[0])
    integral = time_integral(ensemble, lambda x: np.abs(table(x[:, 0])), stopped.times)
    lhs = g_eps(stopped.states)
    diff = lhs - g0 - integral
    m, s = mean_se(diff)
    verdict = "pass" if m <= EQ_SE * s else "fail"
    lm, ls = mean_se(lhs)
    rm, rs = mean_se(g0 + integral)
    return _report("dynkin_inequality", inputs_digest(triplet, g_eps, rule, t), {
        "lhs_minus_rhs": Estimate(m, s, ensemble.N),
        "lhs": Estimate(lm, ls, ensemble.N),
        "rhs": Estimate(rm, rs, ensemble.N),
    }, {"margin_se": EQ_SE}, verdict, ensemble.config.seed, rule=rule.label)


def _stopped_range(ensemble: PathEnsemble, until: np.ndarray) -> tuple[float, float]:
    """Extent of the skeleton values visited strictly before the stopping times."""
    lo, hi = 0.0, 0.0
    for sk in ensemble.skeleton_blocks():
        live = sk.time < until[sk.path + sk.offset]
        if np.any(live):
            vals = np.concatenate([sk.right[live, 0], sk.left[live, 0]])
            lo, hi = min(lo, float(vals.min())), max(hi, float(vals.max()))
    # crossing points on the exit sphere sit at the end of the last segment
    return lo, hi


# ---------------------------------------------------------------- growth


@dataclass(frozen=True)
class GronwallFit:
    c1: float
    c2: float
    c1_cert: float
    c2_cert: float
    times: np.ndarray
    kappa: np.ndarray
    kappa_se: np.ndarray
    doubling_lhs: float
    doubling_rhs: float
    report: VerificationReport


def gronwall_growth(triplet: LevyTriplet, g: WeightFunction, T: float, ensemble: Optional[PathEnsemble] = None,
                    cfg: Optional[SimConfig] = None, epsilon: float = 0.1, n_times: int = 16,
                    doubling_T: Optional[float] = None) -> GronwallFit:
    """Fit log E[g(X_t)] ~ log c1 + c2 t on (0, T] and certify it.

    c2 is the weighted least-squares slope over [T/2, T], where the growth
    rate rather than the short-time transient sets it; c1 is the smallest
    intercept for which c1 e^{c2 t} dominates every estimate on (0, T].  The certificate uses the
    generator bound: with K = C_ε · bracket · c_ε,
    E g(X_t) <= c_ε g^ε(0) e^{K t}.  The doubling inequality
    κ_{2S} <= κ_S (1 + c κ_S), κ_S = sup_{t<=S} E g(X_t), is checked at
    S = doubling_T (default T/2).
    """
    crit = jump_moment_criterion(triplet.nu, g)
    if not crit.finite:
        raise MomentCriterionError("∫_{|y|>=1} g dν is infinite")
    if ensemble is None:
        ensemble = sample_paths(triplet, cfg or _default_config(T))
    k_all = np.arange(1, len(ensemble.times))
    k_all = k_all[ensemble.times[k_all] <= T * (1 + 1e-12)]
    pick = np.unique(np.linspace(0, k_all.size - 1, min(n_times, k_all.size)).round().astype(int))
    ks = k_all[pick]
    times = ensemble.times[ks]
    est = [mean_se(g(ensemble.states[:, k])) for k in ks]
    kappa = np.array([e[0] for e in est])
    kse = np.array([e[1] for e in est])
    logk = np.log(kappa)
    w = 1.0 / np.maximum(kse / kappa, 1e-12) ** 2
    late = times >= T / 2 * (1 - 1e-12)
    if late.sum() < 2:
        late[:] = True
    A = np.column_stack([np.ones(late.sum()), times[late]])
    sw = np.sqrt(w[late])
    coef = np.linalg.lstsq(A * sw[:, None], logk[late] * sw, rcond=None)[0]
    c2 = float(coef[1])
    c1 = float(np.max(kappa * np.exp(-c2 * times)))
    g_eps = mollify(g, Mollifier(epsilon, g.dim))
    k6 = generator_bound_constants(triplet, g_eps)
    c_eps = g_eps.extra["c_eps"]
    c2_cert = k6.C_eps * k6.bracket * c_eps
    c1_cert = c_eps * float(g_eps(np.zeros((1, g.dim)))[0])
    with np.errstate(over="ignore"):
        bound = c1_cert * np.exp(c2_cert * times)
    cert_ok = bool(np.all(kappa <= bound + EQ_SE * kse))
    S = doubling_T if doubling_T is not None else T / 2
    half = ensemble.times <= S * (1 + 1e-12)
    full = ensemble.times <= 2 * S * (1 + 1e-12)
    kap = {}
    for name, mask in (("S", half), ("2S", full)):
        idx = np.flatnonzero(mask)
        vals = [mean_se(g(ensemble.states[:, k])) for k in idx]
        j = int(np.argmax([v[0] for v in vals]))
        kap[name] = vals[j]
    kS, kS_se = kap["S"]
    k2S, k2S_se = kap["2S"]
    rhs = kS * (1 + g.c * kS)
    rhs_se = kS_se * (1 + 2 * g.c * kS)
    doubling_ok = k2S <= rhs + EQ_SE * math.hypot(k2S_se, rhs_se)
    verdict = "pass" if cert_ok and doubling_ok else "fail"
    rep = _report("gronwall_growth", inputs_digest(triplet, g, T), {
        "c2_fit": Estimate(c2, 0.0, ensemble.N),
        "kappa_S": Estimate(kS, kS_se, ensemble.N),
        "kappa_2S": Estimate(k2S, k2S_se, ensemble.N),
    }, {"c1_cert": c1_cert, "c2_cert": c2_cert, "doubling_rhs": rhs, "margin_se": EQ_SE},
        verdict, ensemble.config.seed, c1_fit=c1, certificate=cert_ok, doubling=doubling_ok)
    return GronwallFit(c1, c2, c1_cert, c2_cert, times, kappa, kse, k2S, rhs, rep)


# ---------------------------------------------------------------- semigroup


@dataclass(frozen=True)
class SemigroupCurve:
    times: np.ndarray
    values: np.ndarray
    std_errors: np.ndarray
    ladders: tuple
    phi_norm: float
    verdict: str
    report: VerificationReport


def _phi_rule(phi: C2Function, panels: int = 8, nodes: int = 32):
    c, rho = phi.center[0], phi.support_radius
    edges = np.linspace(c - rho, c + rho, panels + 1)
    z, w = mapped_rule(edges[:-1], edges[1:], nodes)
    z, w = z.ravel(), w.ravel()
    return z, w, phi(z[:, None])


def _shifted_mass(phi_rule, g: WeightFunction, X: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Φ_g(X) = ∫ φ(z) g(z + X) dz per sample."""
    z, w, pv = phi_rule
    out = np.empty(X.size)
    wp = w * pv
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(0, X.size, chunk):
            xs = X[i:i + chunk]
            gv = g((z[None, :] + xs[:, None]).reshape(-1, 1)).reshape(xs.size, z.size)
            ok = np.all(np.isfinite(gv), axis=1)
            out[i:i + chunk] = np.where(ok, np.where(ok[:, None], gv, 0.0) @ wp, np.inf)
    return out


def _near_norm(phi: C2Function, g: WeightFunction, X: np.ndarray, N: int, M: float) -> float:
    """∫ |(1/N) Σ_{near} φ(x - X_i) - φ(x)| g(x) dx on a lattice, by CIC binning."""
    c, rho = phi.center[0], phi.support_radius
    scale = float(np.median(np.abs(X))) if X.size else 0.0
    h = min(rho / 200, max(scale / 20, rho / 4000))
    kmax = int(math.ceil(M / h)) + 1
    pos = X / h + kmax
    i0 = np.floor(pos).astype(np.int64)
    fr = pos - i0
    wts = np.bincount(i0, weights=1 - fr, minlength=2 * kmax + 2) + np.bincount(
        np.minimum(i0 + 1, 2 * kmax + 1), weights=fr, minlength=2 * kmax + 2)
    wts = wts[: 2 * kmax + 2] / N
    m_phi = int(math.ceil(rho / h))
    offs = np.arange(-m_phi, m_phi + 1)
    pk = phi((c + offs * h)[:, None])
    conv = signal.fftconvolve(wts, pk)
    # conv[i] is the value at x = c + (i - kmax - m_phi) h
    xs = c + (np.arange(conv.size) - kmax - m_phi) * h
    diff = np.abs(conv - phi(xs[:, None])) * g(xs[:, None])
    return float(np.trapezoid(diff, xs))


def _semigroup_norm(phi, g, X, M, batches=10):
    N = X.size
    near = np.abs(X) <= M
    rule = _phi_rule(phi)
    far_vals = np.zeros(N)
    if np.any(~near):
        far_vals[~near] = _shifted_mass(rule, g, X[~near])
    total = _near_norm(phi, g, X[near], N, M) + math.fsum(far_vals) / N
    parts = []
    for b in np.array_split(np.arange(N), batches):
        nb = near[b]
        parts.append(_near_norm(phi, g, X[b][nb], b.size, M) + math.fsum(far_vals[b]) / b.size)
    se = float(np.std(parts, ddof=1) / math.sqrt(batches))
    return total, se if math.isfinite(se) else math.inf


def semigroup_continuity(triplet: LevyTriplet, phi: C2Function, g: WeightFunction, t_list: Sequence[float],
                         N: int = 100_000, seed: int = 0, delta: float = 0.1, mode: str = "gaussian_approx",
                         eta: float = 0.05) -> SemigroupCurve:
    """t -> ‖P*_t φ - φ‖_{L^1(g)} with P*_t φ(x) = E φ(x - X_t) (d = 1, φ >= 0).

    Samples with |X_t| <= M (M = max(2ρ, 8)) are binned onto a lattice and
    convolved with φ; the others have supports disjoint from φ and add
    Φ_g(X) = ∫ φ(z) g(z + X) dz each.  Finiteness comes from a capped ladder
    on Φ_g(X_t) at the largest t, since E Φ_g(X_t) = ‖P*_t φ‖_{L^1(g)}.
    Verdict: pass iff every ladder is finite and the value at the smallest
    positive t is below eta · ‖φ‖_{L^1(g)}.
    """
    if triplet.dim != 1:
        raise VerificationError("semigroup continuity is implemented for d = 1")
    if not phi.compact:
        raise VerificationError("φ must be compactly supported")
    rule = _phi_rule(phi)
    z, w, pv = rule
    if np.any(pv < -1e-15):
        raise VerificationError("φ must be non-negative")
    phi_norm = float((w * pv) @ g(z[:, None]))
    crit = jump_moment_criterion(triplet.nu, g)
    M = max(2 * phi.support_radius, 8.0)
    vals, ses, ladders = [], [], []
    bound_ok = True
    for t in t_list:
        if t == 0:
            vals.append(0.0)
            ses.append(0.0)
            ladders.append(None)
            continue
        ens = sample_paths(triplet, SimConfig(T=t, dt=t, N=N, delta=delta, mode=mode, seed=seed))
        X = ens.states[:, -1, 0]
        v, s = _semigroup_norm(phi, g, X, M)
        vals.append(v)
        ses.append(s)
        shifted = _shifted_mass(rule, g, X)
        ladders.append(capped_ladder(shifted))
        # ‖P*_t φ‖ <= c E[g(X_t)] ‖φ‖, checked on the paired sample
        with np.errstate(over="ignore", invalid="ignore"):
            dm, ds = mean_se(shifted - g.c * phi_norm * g(X[:, None]))
        if math.isfinite(dm) and dm > EQ_SE * ds:
            bound_ok = False
    live = [lad for lad in ladders if lad is not None]
    finite = all(lad.finite for lad in live)
    pos = [i for i, t in enumerate(t_list) if t > 0]
    small = min(pos, key=lambda i: t_list[i]) if pos else None
    continuous = small is None or vals[small] < eta * phi_norm
    verdict = "pass" if finite and continuous and bound_ok and crit.finite else "fail"
    top = live[-1] if live else Estimate(0.0, 0.0, N)
    rep = _report("semigroup_continuity", inputs_digest(triplet, phi, g, tuple(t_list)), {
        "norm_at_smallest_t": Estimate(vals[small] if small is not None else 0.0,
                                       ses[small] if small is not None else 0.0, N),
        "P_t_phi_norm_at_largest_t": top,
    }, {"eta_rel": eta, "phi_norm": phi_norm}, verdict, seed,
        ladder_finite=finite, criterion_finite=crit.finite, operator_bound=bound_ok)
    return SemigroupCurve(np.asarray(t_list, dtype=float), np.asarray(vals), np.asarray(ses), tuple(ladders),
                          phi_norm, verdict, rep)


# ---------------------------------------------------------------- equivalence chain


@dataclass(frozen=True)
class ChainVerdicts:
    criterion: bool  # (e)
    moment: bool  # (a)
    running_sup: bool  # (b)
    uniform_integrability: Optional[bool]  # (c)/(d); None when inconclusive
    adjoint: bool  # (g)/(h)
    semigroup: bool  # (f)
    details: Mapping[str, Any]

    @property
    def as_dict(self) -> dict:
        return {"e": self.criterion, "a": self.moment, "b": self.running_sup,
                "c/d": self.uniform_integrability, "g/h": self.adjoint, "f": self.semigroup}

    @property
    def coherent(self) -> bool:
        return len(set(self.as_dict.values())) == 1


def equivalence_chain(triplet: LevyTriplet, g: WeightFunction, ensemble: PathEnsemble, phi: C2Function,
                      t: Optional[float] = None, semigroup_times: Sequence[float] = (1e-3, 1.0),
                      semigroup_N: Optional[int] = None) -> ChainVerdicts:
    """Finite/infinite verdicts of every implemented condition for one (triplet, g)."""
    t = ensemble.times[-1] if t is None else t
    crit = jump_moment_criterion(triplet.nu, g)
    a = mc_moment(ensemble, g, t)
    b = sup_moment(ensemble, g, t)
    ui = ui_profile(ensemble, g, t)
    adj = adjoint_weighted_norm(triplet, phi, g)
    cfg = ensemble.config
    sg = semigroup_continuity(triplet, phi, g, semigroup_times, N=semigroup_N or cfg.N, seed=cfg.seed,
                              delta=cfg.delta, mode=cfg.mode)
    ui_v = {"pass": True, "fail": False}.get(ui.verdict)
    sg_finite = all(lad.finite for lad in sg.ladders if lad is not None)
    return ChainVerdicts(
        crit.finite, a.finite, b.finite, ui_v, adj.finite, sg_finite,
        {"criterion_value": crit.value, "moment": a, "sup": b, "ui": ui, "adjoint": adj, "semigroup": sg},
    )


# ---------------------------------------------------------------- lattices


@dataclass(frozen=True)
class LatticeResult:
    lattice: bool
    alpha: float
    span: float
    psi: complex
    structural: Optional[bool]
    empirical_off_mass: Optional[float]
    report: VerificationReport


def _lattice_structure(triplet: LevyTriplet, beta: float, alpha: float, tol: float) -> tuple[bool, dict]:
    span = 2 * math.pi / abs(beta)
    nu = triplet.nu
    notes = {}
    q_ok = abs(float(triplet.Q[0, 0])) <= tol
    atoms_only = not nu.densities
    pos, mass = nu.atom_arrays()
    kk = pos[:, 0] / span if mass.size else np.zeros(0)
    on_lattice = bool(np.all(np.abs(kk - np.round(kk)) <= 1e-9 * np.maximum(1.0, np.abs(kk))))
    kr = np.round(kk)
    small = np.abs(kr) < abs(beta) / (2 * math.pi)
    # atoms sit at span·k whatever the sign of β, so the compensator sum is Σ y ν({y}) over |y| < 1
    b_pred = -alpha / beta + span * math.fsum((kr[small] * mass[small]).tolist())
    b_ok = abs(float(triplet.b[0]) - b_pred) <= 1e-9 * max(1.0, abs(b_pred))
    notes.update(Q_zero=q_ok, atoms_only=atoms_only, atoms_on_lattice=on_lattice, b_predicted=b_pred, b_ok=b_ok)
    return q_ok and atoms_only and on_lattice and b_ok, notes


def lattice_detect(triplet: LevyTriplet, beta: float, tol: float = LATTICE_TOL, simulate: bool = True,
                   cfg: Optional[SimConfig] = None, t: float = 1.0) -> LatticeResult:
    """Is X_t supported on a shifted lattice of span 2π/|β|?

    ψ(β) = iα with vanishing real part is the analytic test.  It is
    cross-checked against the structure of the triplet (Q = 0, atoms on the
    lattice, drift given by the compensator sum over |k| < |β|/2π) and, when
    ``simulate``, against the empirical mass of X_t + αt/β off the lattice.
    Whenever X_{t0} sits at γ the relation γ ∈ αt0/β + (2π/β)Z holds; it is
    reported, not tested beyond the empirical check.
    """
    if triplet.dim != 1:
        raise VerificationError("lattice detection is implemented for d = 1")
    if beta == 0:
        raise VerificationError("beta must be nonzero")
    psi = eval_psi(triplet, [beta])
    span = 2 * math.pi / abs(beta)
    digest = inputs_digest(triplet, beta)
    if abs(psi.real) > tol:
        rep = _report("lattice", digest, {"re_psi": Estimate(psi.real, 0.0, 0)}, {"tol": tol}, "fail",
                      None, evidence=f"Re psi(beta) = {psi.real:.6e} > tol")
        return LatticeResult(False, math.nan, span, psi, None, None, rep)
    alpha = psi.imag
    structural, notes = _lattice_structure(triplet, beta, alpha, max(tol, 1e-12))
    off = None
    seed = None
    if simulate:
        cfg = cfg or SimConfig(T=t, dt=t / 8, N=100_000, seed=0)
        seed = cfg.seed
        ens = sample_paths(triplet, cfg)
        X = ens.states[:, -1, 0] + alpha * t / beta
        k = X / span
        dist = np.abs(k - np.round(k)) * span
        off = float(np.mean(dist > 1e-9 * np.maximum(1.0, np.abs(X))))
    ok = structural and (off is None or off < 1e-12)
    rep = _report("lattice", digest, {
        "re_psi": Estimate(psi.real, 0.0, 0),
        "alpha": Estimate(alpha, 0.0, 0),
        "off_lattice_mass": Estimate(off if off is not None else math.nan, 0.0, cfg.N if simulate else 0),
    }, {"tol": tol, "span": span}, "pass" if ok else "fail", seed, **notes,
        relation=f"X_t0 in {-alpha / beta:.17e}*t0 + {span:.17e}*Z")
    return LatticeResult(True, alpha, span, psi, structural, off, rep)


def lat37_martingale(sample: Callable[[np.random.Generator, int], np.ndarray], beta: float,
                     theta: Optional[float] = None, n_max: int = 20, N: int = 20_000, seed: int = 0,
                     tol: float = 1e-9) -> VerificationReport:
    """Y_n = 2^{-n} Π_{k<=n} (1 + cos(βX_k - θ)) over iid copies of X.

    E[Y_n] = 1 for every n exactly when βX - θ ∈ 2πZ almost surely; Y_n then
    stays at 1.  Raises :class:`LatticePreconditionError` if |E e^{iβX}| < 1 - tol.
    """
    rng = np.random.default_rng(seed)
    X = np.asarray(sample(rng, N * n_max), dtype=float).reshape(N, n_max)
    phi = complex(np.mean(np.exp(1j * beta * X)))
    if abs(phi) < 1 - tol:
        raise LatticePreconditionError(f"|E exp(i beta X)| = {abs(phi):.6f} < 1")
    if theta is None:
        theta = math.atan2(phi.imag, phi.real)
    factors = 0.5 * (1 + np.cos(beta * X - theta))
    Y = np.cumprod(factors, axis=1)
    ok = True
    worst = 0.0
    for n in range(n_max):
        m, s = mean_se(Y[:, n])
        worst = max(worst, abs(m - 1))
        if abs(m - 1) > EQ_SE * s + tol:
            ok = False
    concentrated = float(np.mean(np.abs(Y[:, -1] - 1) < tol))
    k = (beta * X - theta) / (2 * math.pi)
    off = float(np.mean(np.abs(k - np.round(k)) > tol))
    verdict = "pass" if ok and concentrated > 0.99 else "fail"
    return _report("lat37_martingale", inputs_digest(beta, theta, n_max, N), {
        "max_abs_mean_minus_one": Estimate(worst, 0.0, N),
        "concentration_at_one": Estimate(concentrated, 0.0, N),
        "off_lattice_mass": Estimate(off, 0.0, N),
    }, {"margin_se": EQ_SE, "tol": tol}, verdict, seed, theta=theta)


# ---------------------------------------------------------------- transience


@dataclass(frozen=True)
class TransienceResult:
    status: str  # "transient" or "inconclusive"
    beta_root: Optional[float]
    drift_sign: Optional[int]
    report: VerificationReport


def transience_probe(triplet: LevyTriplet, search_interval: tuple[float, float] = (0.01, 10.0),
                     xtol: float = 1e-12, simulate: bool = True, cfg: Optional[SimConfig] = None,
                     check_times: Sequence[float] = (0.25, 0.5, 1.0)) -> TransienceResult:
    """Look for β ≠ 0 with ψ(-iβ) = 0 by bisection; e^{βX_t} is then a
    martingale and βX_t drifts to -∞.

    A single root inside the bracket is assumed.  Without a sign change the
    probe is inconclusive; it never claims transience from the absence of one.
    """
    if triplet.dim != 1:
        raise VerificationError("the transience probe is implemented for d = 1")
    lo, hi = search_interval
    if lo == 0 or hi == 0 or lo * hi < 0 or lo >= hi:
        raise VerificationError("the bracket must lie on one side of 0")
    edge = max(abs(lo), abs(hi))
    if not jump_moment_criterion(triplet.nu, exp_beta(edge)).finite:
        raise MomentCriterionError(f"exponential moments of order {edge} are missing")
    digest = inputs_digest(triplet, search_interval)
    f = lambda b: eval_cumulant(triplet, b)
    flo, fhi = f(lo), f(hi)
    if flo == 0 or fhi == 0:
        root = lo if flo == 0 else hi
    elif flo * fhi > 0:
        rep = _report("transience", digest, {"cumulant_lo": Estimate(flo, 0.0, 0),
                                             "cumulant_hi": Estimate(fhi, 0.0, 0)},
                      {}, "inconclusive", None, reason="no sign change of the cumulant on the bracket")
        return TransienceResult("inconclusive", None, None, rep)
    else:
        root = optimize.bisect(f, lo, hi, xtol=xtol, rtol=4 * np.finfo(float).eps, maxiter=500)
    # sign of the mean E X_1 = -κ'(0), by a central difference of the cumulant
    h = 1e-4
    mean = -(f(h) - f(-h)) / (2 * h) if jump_moment_criterion(triplet.nu, exp_beta(h)).finite else math.nan
    drift_sign = int(np.sign(mean)) if math.isfinite(mean) else None
    dominated = jump_moment_criterion(triplet.nu, exp_beta(abs(root))).finite
    estimates = {"beta_root": Estimate(root, 0.0, 0)}
    ok = True
    seed = None
    if simulate:
        T = max(check_times)
        cfg = cfg or SimConfig(T=T, dt=T / 64, N=100_000, seed=0)
        seed = cfg.seed
        ens = sample_paths(triplet, cfg)
        for t in check_times:
            with np.errstate(over="ignore"):
                m, s = mean_se(np.exp(root * ens.state_at(t)[:, 0]))
            estimates[f"E_exp_beta_X_{t:g}"] = Estimate(m, s, ens.N)
            if not abs(m - 1) <= EQ_SE * s:
                ok = False
        meds = np.array([np.median(root * ens.state_at(t)[:, 0]) for t in check_times])
        slope = np.polyfit(np.asarray(check_times), meds, 1)[0]
        estimates["median_slope"] = Estimate(float(slope), 0.0, ens.N)
        ok = ok and slope < 0
    rep = _report("transience", digest, estimates, {"margin_se": EQ_SE, "xtol": xtol},
                  "pass" if ok and dominated else "fail", seed,
                  martingale_dominated=dominated, drift_sign=drift_sign)
    return TransienceResult("transient", float(root), drift_sign, rep)
