import math

import numpy as np
import pytest
from scipy import integrate, optimize, stats

from levymoments import catalog
from levymoments.generator import bump, gaussian_bump
from levymoments.simulate import SimConfig, StoppingRule, sample_paths
from levymoments.triplet import MomentCriterionError, eval_cumulant
from levymoments.verify import (
    CAP_LADDER, Estimate, LatticePreconditionError, VerificationError, VerificationReport, capped_ladder,
    dynkin_inequality_check, dynkin_residual, equivalence_chain, gronwall_growth, lat37_martingale,
    lattice_detect, mc_moment, mean_se, semigroup_continuity, sup_moment, transience_probe, ui_profile,
)
from levymoments.weights import cap, exp_beta


def paths(triplet, N=20_000, T=1.0, dt=1 / 64, seed=0):
    return sample_paths(triplet, SimConfig(T=T, dt=dt, N=N, seed=seed))


def poisson_weights(t, kmax=60):
    k = np.arange(kmax)
    return k, stats.poisson.pmf(k, t)


# ---------------------------------------------------------------- estimates and reports


def test_estimate_invariants():
    with pytest.raises(VerificationError):
        Estimate(1.0, -1e-3, 10)
    with pytest.raises(VerificationError):
        Estimate(1.0, 0.1, 10, flag="huge")
    with pytest.raises(VerificationError):
        VerificationReport("x", "d", {}, {}, "maybe")


def test_mean_se_against_numpy():
    v = np.random.default_rng(0).exponential(size=1001)
    m, s = mean_se(v)
    assert m == pytest.approx(v.mean(), rel=1e-14)
    assert s == pytest.approx(v.std(ddof=1) / math.sqrt(v.size), rel=1e-12)
    assert mean_se(np.full(7, 2.5)) == (2.5, 0.0)
    assert mean_se([1.0, np.inf]) == (math.inf, math.inf)


def test_report_text_is_full_precision():
    rep = VerificationReport("c", "abc", {"v": Estimate(1 / 3, 0.1, 5)}, {"eta": 0.01}, "pass", 7)
    text = rep.to_text()
    assert "value=3.33333333333333315e-01" in text
    assert "threshold.eta: 1.00000000000000002e-02" in text
    assert rep.summary_row() == {"id": "c", "verdict": "pass", "value": 1 / 3, "se": 0.1, "seed": 7}


def test_ladder_light_tail_is_finite():
    est = capped_ladder(np.random.default_rng(1).exponential(size=50_000))
    assert est.finite and est.value == pytest.approx(1.0, abs=4 * est.std_error)


def test_ladder_pareto_half_is_diverging():
    # P(V > v) = v^{-1/2}: E min(V, n) = 2 sqrt(n) - 1 grows by a factor 10 per cap
    v = np.random.default_rng(2).pareto(0.5, size=50_000) + 1.0
    assert capped_ladder(v).flag == "diverging"


def test_ladder_means_non_decreasing():
    v = np.random.default_rng(3).pareto(0.8, size=20_000) + 1.0
    means = capped_ladder(v).details["capped_means"]
    assert len(means) == len(CAP_LADDER) and np.all(np.diff(means) >= 0)


# ---------------------------------------------------------------- mc_moment


def test_moment_of_pure_drift():
    est = mc_moment(paths(catalog.brownian(1.0, 0.0), N=100), exp_beta(1.0), 1.0)
    assert est.value == pytest.approx(math.e, rel=1e-14) and est.std_error == 0.0 and est.finite


def test_moment_of_bm_against_quadrature():
    ref = integrate.quad(lambda x: math.exp(abs(x)) * stats.norm.pdf(x), -40, 40, points=[0.0], epsabs=1e-13)[0]
    assert ref == pytest.approx(2 * math.exp(0.5) * stats.norm.cdf(1.0), rel=1e-12)
    est = mc_moment(paths(catalog.process("bm"), N=100_000, dt=1 / 8, seed=1), exp_beta(1.0), 1.0)
    assert est.finite and abs(est.value - ref) < 3 * est.std_error


def test_moment_of_power_law_diverges():
    ens = paths(catalog.process("power_law"), seed=2)
    assert mc_moment(ens, exp_beta(1.0), 1.0).flag == "diverging"
    assert sup_moment(ens, exp_beta(1.0), 1.0).flag == "diverging"


@pytest.mark.parametrize("beta", [1.0, 2.0, 5.0])
def test_bounded_jumps_give_every_exponential_moment(beta):
    # jumps supported in |y| <= 1/2 together with a Brownian part; larger atoms make
    # E e^{5|X|} finite but far beyond what a capped ladder can resolve
    tr = catalog.atoms([-0.5, 0.4], [1.0, 2.0], b=0.3, Q=0.5)
    est = mc_moment(paths(tr, T=0.25, dt=1 / 64, seed=3), exp_beta(beta), 0.25)
    assert est.finite


# ---------------------------------------------------------------- ui_profile


def test_ui_curve_of_bounded_weight_vanishes_above_bound():
    M = 5.0
    ens = paths(catalog.process("cp_gauss"), N=5000)
    prof = ui_profile(ens, cap(exp_beta(1.0), M), 1.0, levels=[2.0, 4.0, 5.5, 10.0])
    assert np.all(prof.curve[prof.levels > M] == 0.0)
    assert prof.verdict == "pass"


def test_ui_bm_exit_balls_pass():
    ens = paths(catalog.process("bm"), seed=4)
    rules = [StoppingRule.exit_ball(float(r), 1.0) for r in range(1, 9)]
    prof = ui_profile(ens, exp_beta(1.0), 1.0, rules=rules)
    assert prof.verdict == "pass" and prof.dominated
    assert np.all(np.diff(prof.curve) <= 0)


def test_ui_power_law_fails():
    prof = ui_profile(paths(catalog.process("power_law"), seed=5), exp_beta(1.0), 1.0)
    assert prof.verdict == "fail"
    assert prof.curve[-1] > prof.eta


def test_ui_rejects_uncapped_rules():
    ens = paths(catalog.process("bm"), N=100, T=1.0)
    with pytest.raises(VerificationError):
        ui_profile(ens, exp_beta(1.0), 0.5, rules=[StoppingRule.deterministic(1.0)])


# ---------------------------------------------------------------- Dynkin


def test_dynkin_residual_at_time_zero():
    est, rep = dynkin_residual(catalog.process("bm"), bump(1.0), StoppingRule.deterministic(0.0), 0.0)
    assert est.value == 0.0 and rep.passed


def test_dynkin_requires_compact_u():
    with pytest.raises(VerificationError):
        dynkin_residual(catalog.process("bm"), gaussian_bump(0.7), StoppingRule.deterministic(1.0), 1.0)


def test_dynkin_residual_bm_bump():
    tr = catalog.process("bm")
    est, rep = dynkin_residual(tr, bump(1.0), StoppingRule.deterministic(1.0), 1.0, ensemble=paths(tr, seed=6))
    assert rep.passed
    assert abs(est.value) < 4 * est.std_error + est.details["budget"]


def test_dynkin_poisson_sum_oracle():
    tr = catalog.process("poisson")
    u = bump(1.0)
    k, p = poisson_weights(1.0)
    oracle = float(p @ u(k[:, None].astype(float)))
    assert oracle == pytest.approx(math.exp(-2.0), rel=1e-12)  # only k = 0 lies inside the open support
    est, rep = dynkin_residual(tr, u, StoppingRule.deterministic(1.0), 1.0, ensemble=paths(tr, seed=7))
    assert rep.passed
    eu = rep.estimates["E_u_stopped"]
    assert abs(eu.value - oracle) < 3 * eu.std_error


def test_dynkin_residual_with_exit_rule():
    tr = catalog.process("tempered")
    est, rep = dynkin_residual(tr, bump(2.0, center=0.5), StoppingRule.exit_ball(1.0, 1.0), 1.0,
                               ensemble=paths(tr, seed=8))
    assert rep.passed


def test_dynkin_inequality_degenerate_process():
    tr = catalog.brownian(0.0, 0.0)
    rep = dynkin_inequality_check(tr, catalog.mollified("exp1"), StoppingRule.deterministic(1.0), 1.0,
                                  ensemble=paths(tr, N=100))
    assert rep.passed
    assert rep.estimates["lhs_minus_rhs"].value == 0.0


@pytest.mark.parametrize("tr", [catalog.brownian(0.0, 1.0), catalog.poisson(1.0, size=2.0)], ids=["bm", "cp_delta2"])
def test_dynkin_inequality_exit_ball_two(tr):
    rep = dynkin_inequality_check(tr, catalog.mollified("exp1"), StoppingRule.exit_ball(2.0, 1.0), 1.0,
                                  ensemble=paths(tr, seed=9))
    assert rep.passed


def test_dynkin_inequality_refuses_infinite_criterion():
    with pytest.raises(MomentCriterionError):
        dynkin_inequality_check(catalog.process("power_law"), catalog.mollified("exp1"),
                                StoppingRule.deterministic(1.0), 1.0)


# ---------------------------------------------------------------- Gronwall


def test_gronwall_pure_drift():
    fit = gronwall_growth(catalog.brownian(1.0, 0.0), exp_beta(1.0), 1.0,
                          ensemble=paths(catalog.brownian(1.0, 0.0), N=50))
    assert fit.c2 == pytest.approx(1.0, abs=1e-9)
    assert fit.c1 == pytest.approx(1.0, abs=1e-9)
    assert fit.report.passed


def test_gronwall_bm_against_quadrature():
    g = exp_beta(1.0)
    T = 4.0
    ens = paths(catalog.process("bm"), N=40_000, T=T, dt=T / 128, seed=10)
    fit = gronwall_growth(catalog.process("bm"), g, T, ensemble=ens)
    exact = 2 * np.exp(fit.times / 2) * stats.norm.cdf(np.sqrt(fit.times))
    assert np.all(np.abs(fit.kappa - exact) < 3 * fit.kappa_se)
    # E e^{|B_t|} <= 2 e^{t/2}: the pair (2, 1/2) dominates every estimate
    assert np.all(fit.kappa <= 2 * np.exp(fit.times / 2) + 3 * fit.kappa_se)
    # the log-slope decreases to 1/2; the fit over [2, 4] sits just above it
    late = fit.times >= T / 2
    slope = np.polyfit(fit.times[late], np.log(exact[late]), 1)[0]
    assert fit.c2 == pytest.approx(slope, abs=0.02)
    assert fit.c2 <= 0.5 + 0.1
    assert fit.report.passed


def test_gronwall_poisson_closed_form():
    ens = paths(catalog.process("poisson"), N=50_000, seed=11)
    fit = gronwall_growth(catalog.process("poisson"), exp_beta(1.0), 1.0, ensemble=ens)
    assert fit.c2 == pytest.approx(math.e - 1, rel=0.1)
    assert fit.report.passed and fit.report.notes["doubling"]


def test_gronwall_refuses_infinite_criterion():
    with pytest.raises(MomentCriterionError):
        gronwall_growth(catalog.process("power_law"), exp_beta(1.0), 1.0)


# ---------------------------------------------------------------- semigroup


def test_semigroup_at_time_zero():
    sg = semigroup_continuity(catalog.process("bm"), bump(1.0), exp_beta(1.0), [0.0], N=100)
    assert sg.values[0] == 0.0


def test_semigroup_bm_small_time():
    sg = semigroup_continuity(catalog.process("bm"), bump(1.0), exp_beta(1.0), [1e-3, 1.0], N=20_000, seed=1)
    assert sg.values[0] < 0.05 * sg.phi_norm
    assert sg.verdict == "pass" and sg.report.notes["operator_bound"]


def test_semigroup_poisson_half_radius_oracle():
    phi, g, t = bump(0.5), exp_beta(1.0), 0.7
    k, p = poisson_weights(t)
    f = lambda x: float(phi(np.array([[x]]))[0])
    own = integrate.quad(lambda x: f(x) * math.exp(abs(x)), -0.5, 0.5, epsabs=1e-14)[0]
    shifted = [integrate.quad(lambda x: f(x) * math.exp(abs(x + kk)), -0.5, 0.5, epsabs=1e-14)[0] for kk in k[1:]]
    # translates by k >= 1 are disjoint from φ: the no-jump part loses (1 - p_0) of φ
    oracle = (1 - p[0]) * own + float(p[1:] @ shifted)
    sg = semigroup_continuity(catalog.process("poisson"), phi, g, [t], N=100_000, seed=2)
    assert sg.phi_norm == pytest.approx(own, rel=1e-10)
    assert abs(sg.values[0] - oracle) < 3 * sg.std_errors[0] + 1e-3 * oracle


def test_semigroup_poisson_unit_radius_overlapping_translates():
    phi, t = bump(1.0), 1.0
    k, p = poisson_weights(t)

    def integrand(x):
        pts = (x - k.astype(float))[:, None]
        return abs(float(p @ phi(pts)) - float(phi(np.array([[x]]))[0])) * math.exp(abs(x))

    edges = np.arange(-1.0, 40.0, 1.0)
    oracle = math.fsum(integrate.quad(integrand, a, a + 1, epsabs=1e-14, limit=200)[0] for a in edges)
    assert oracle == pytest.approx(2.729794271706975, rel=1e-9)
    sg = semigroup_continuity(catalog.process("poisson"), phi, exp_beta(1.0), [t], N=100_000, seed=3)
    assert abs(sg.values[0] - oracle) < 3 * sg.std_errors[0] + 1e-3 * oracle


def test_semigroup_power_law_fails():
    sg = semigroup_continuity(catalog.process("power_law"), bump(1.0), exp_beta(1.0), [1e-3, 1.0], N=20_000)
    assert sg.verdict == "fail"
    assert not sg.ladders[-1].finite


def test_semigroup_rejects_non_compact_phi():
    with pytest.raises(VerificationError):
        semigroup_continuity(catalog.process("bm"), gaussian_bump(1.0), exp_beta(1.0), [0.1], N=10)


# ---------------------------------------------------------------- equivalence chain


def test_chain_finite_pair_all_pass():
    tr = catalog.process("poisson")
    ch = equivalence_chain(tr, exp_beta(1.0), paths(tr, seed=12), bump(1.0), semigroup_N=20_000)
    assert ch.coherent and ch.criterion


def test_chain_negative_control_all_fail():
    tr = catalog.process("power_law")
    ch = equivalence_chain(tr, exp_beta(1.0), paths(tr, seed=13), bump(1.0), semigroup_N=20_000)
    assert ch.coherent and ch.as_dict == dict.fromkeys(ch.as_dict, False)


# ---------------------------------------------------------------- lattices


def test_lattice_poisson_two_pi():
    res = lattice_detect(catalog.process("poisson"), 2 * math.pi, cfg=SimConfig(T=1.0, dt=1 / 8, N=20_000))
    assert res.lattice and res.span == pytest.approx(1.0, rel=1e-15)
    assert abs(res.alpha) < 1e-12
    assert res.structural and res.empirical_off_mass == 0.0
    assert res.report.passed


@pytest.mark.parametrize("beta", [1.0, 2 * math.pi, -3.0])
def test_lattice_rejects_bm(beta):
    res = lattice_detect(catalog.process("bm"), beta, simulate=False)
    assert not res.lattice and res.psi.real == pytest.approx(beta**2 / 2, rel=1e-12)


def test_lattice_atoms_on_even_integers():
    tr = catalog.atoms([2.0, 4.0], [1.0, 1.0])
    res = lattice_detect(tr, math.pi, cfg=SimConfig(T=1.0, dt=1 / 8, N=5000))
    assert res.lattice and res.span == pytest.approx(2.0, rel=1e-15)
    assert abs(res.alpha) < 1e-12
    assert abs(res.report.notes["b_predicted"]) < 1e-12 and res.structural


def test_lattice_drift_relation_for_shifted_poisson():
    # Poisson with drift b: X_t - b t ∈ Z, and ψ(2π) = -2πi b
    b = -2.0
    res = lattice_detect(catalog.poisson(1.0, b=b), 2 * math.pi, cfg=SimConfig(T=1.0, dt=1 / 8, N=5000))
    assert res.lattice and res.alpha == pytest.approx(-2 * math.pi * b, rel=1e-12)
    assert res.report.notes["b_predicted"] == pytest.approx(b, rel=1e-12)
    assert res.structural and res.empirical_off_mass == 0.0


def test_lat37_two_point_on_lattice():
    rep = lat37_martingale(lambda rng, n: 2 * math.pi * rng.integers(0, 2, n), 1.0, theta=0.0, N=2000)
    assert rep.passed
    assert rep.estimates["concentration_at_one"].value == 1.0


def test_lat37_plus_minus_pi():
    rep = lat37_martingale(lambda rng, n: math.pi * rng.choice([-1.0, 1.0], n), 1.0, N=2000)
    assert rep.passed
    assert math.cos(rep.notes["theta"]) == pytest.approx(-1.0, abs=1e-12)
    assert rep.estimates["off_lattice_mass"].value == 0.0


def test_lat37_gaussian_precondition_fails():
    with pytest.raises(LatticePreconditionError):
        lat37_martingale(lambda rng, n: rng.standard_normal(n), 1.0, N=2000)


# ---------------------------------------------------------------- transience


def test_transience_drifted_bm():
    res = transience_probe(catalog.process("drifted_bm"), (0.5, 10.0),
                           cfg=SimConfig(T=1.0, dt=1 / 64, N=50_000, seed=4))
    assert res.status == "transient" and res.beta_root == pytest.approx(2.0, abs=1e-6)
    assert res.drift_sign == -1
    assert res.report.passed


def test_transience_driftless_bm_is_inconclusive():
    res = transience_probe(catalog.process("bm"), (0.01, 10.0), simulate=False)
    assert res.status == "inconclusive" and res.beta_root is None
    assert res.report.verdict == "inconclusive"


def test_transience_unit_atom_against_bisection_oracle():
    oracle = optimize.brentq(lambda b: math.expm1(b) - 2 * b, 1.0, 2.0, xtol=1e-15)
    tr = catalog.poisson(1.0, b=-2.0)
    assert eval_cumulant(tr, oracle) == pytest.approx(0.0, abs=1e-12)
    res = transience_probe(tr, (0.5, 3.0), simulate=False)
    assert res.beta_root == pytest.approx(oracle, abs=1e-6)


def test_transience_refuses_missing_moments():
    with pytest.raises(MomentCriterionError):
        transience_probe(catalog.process("power_law"), (0.1, 2.0), simulate=False)
