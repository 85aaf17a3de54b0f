import math

import numpy as np
import pytest
from scipy import integrate, stats

from levymoments import catalog
from levymoments.simulate import (
    BLOCK, SimConfig, SimulationError, StoppingRule, evaluate_stopping, running_sup_g, sample_paths,
    time_integral, truncated_triplet,
)
from levymoments.triplet import eval_psi
from levymoments.weights import cap, exp_beta


def ensemble(triplet, **kw):
    kw.setdefault("dt", 1 / 64)
    return sample_paths(triplet, SimConfig(**kw))


def bm_exit_probability(R, t, terms=200):
    """P(sup_{s<=t} |B_s| >= R) from the eigenfunction series of the interval (-R, R)."""
    k = np.arange(terms)
    stay = 4 / math.pi * np.sum((-1.0) ** k / (2 * k + 1) * np.exp(-((2 * k + 1) ** 2) * math.pi**2 * t / (8 * R**2)))
    return 1.0 - stay


# ---------------------------------------------------------------- examples


def test_pure_drift_is_a_line():
    ens = ensemble(catalog.brownian(1.0, 0.0), N=50, T=1.0)
    assert np.allclose(ens.states[:, :, 0], ens.times[None, :], rtol=0, atol=1e-14)
    assert ens.jump_path.size == 0


def test_standard_bm_marginal():
    N = 100_000
    x = ensemble(catalog.brownian(0.0, 1.0), N=N, dt=1 / 16, seed=3).state_at(1.0)[:, 0]
    assert abs(x.mean()) < 3 / math.sqrt(N)
    # Var of the sample variance of N(0,1) is 2/N
    assert abs(x.var(ddof=1) - 1.0) < 3 * math.sqrt(2 / N)


def test_poisson_rate_two_characteristic_function_at_pi():
    N = 100_000
    tr = catalog.poisson(rate=2.0)
    assert eval_psi(tr, [math.pi]) == pytest.approx(4.0, abs=1e-13)
    x = ensemble(tr, N=N, dt=1 / 16, seed=5).state_at(1.0)[:, 0]
    z = np.exp(1j * math.pi * x)
    se = math.sqrt(np.var(z.real) / N)
    assert abs(z.real.mean() - math.exp(-4.0)) < 3 * se
    assert abs(z.imag.mean()) < 1e-9


def test_too_many_jumps_per_step_is_refused():
    with pytest.raises(SimulationError, match="delta"):
        sample_paths(catalog.poisson(rate=5000.0), SimConfig(T=1.0, dt=1.0, N=10))


@pytest.mark.parametrize("kw", [dict(dt=0.0), dict(delta=1.5), dict(delta=0.0), dict(N=0), dict(mode="exact"),
                                dict(T=1.0, dt=0.3)])
def test_config_invariants(kw):
    with pytest.raises(SimulationError):
        SimConfig(**kw)


def test_default_grid_step():
    assert SimConfig(T=2.0).dt == 2.0 / 1024


# ---------------------------------------------------------------- stopping


def test_deterministic_rule_stops_at_cap():
    ens = ensemble(catalog.process("tempered"), N=300, T=1.0)
    st = evaluate_stopping(ens, StoppingRule.deterministic(1.0))
    assert np.all(st.times == 1.0)
    assert np.array_equal(st.states, ens.state_at(1.0))


def test_exit_ball_on_pure_drift():
    ens = ensemble(catalog.brownian(1.0, 0.0), N=100, T=1.0)
    st = evaluate_stopping(ens, StoppingRule.exit_ball(0.5, 1.0))
    assert np.allclose(st.times, 0.5, atol=1e-12)
    assert np.allclose(st.states[:, 0], 0.5, atol=1e-12)


def test_exit_ball_on_bm_matches_series():
    N = 40_000
    ens = ensemble(catalog.brownian(0.0, 1.0), N=N, T=1.0, dt=1 / 32, seed=8)
    R = 1.0
    st = evaluate_stopping(ens, StoppingRule.exit_ball(R, 1.0))
    for t in (0.25, 0.5, 1.0):
        p = bm_exit_probability(R, t)
        emp = np.mean(st.hit & (st.times <= t))
        assert abs(emp - p) < 3 * math.sqrt(p * (1 - p) / N)
    # the stopped state sits on the sphere for paths without jumps
    assert np.allclose(np.abs(st.states[st.hit, 0]), R, atol=1e-12)


def test_exit_by_jump_is_seen_at_the_jump_time():
    ens = ensemble(catalog.poisson(1.0, size=3.0), N=2000, T=1.0)
    st = evaluate_stopping(ens, StoppingRule.exit_ball(2.0, 1.0))
    first = {}
    for p, t in zip(ens.jump_path, ens.jump_time):
        first.setdefault(int(p), t)
    hit = np.flatnonzero(st.hit)
    assert set(hit.tolist()) == set(first)
    assert np.array_equal(st.times[hit], np.array([first[p] for p in hit]))
    assert np.all(st.states[hit, 0] == 3.0)


def test_stopping_never_exceeds_cap():
    ens = ensemble(catalog.process("cp_gauss"), N=3000, T=1.0)
    g = exp_beta(1.0)
    rules = [StoppingRule.exit_ball(0.7, 0.5), StoppingRule.level_g(math.e, g, 1.0),
             StoppingRule.compose([StoppingRule.exit_ball(2.0, 1.0), StoppingRule.level_g(2.0, g, 1.0)], 0.75)]
    for rule in rules:
        assert np.all(evaluate_stopping(ens, rule).times <= rule.cap)


def test_cap_beyond_horizon_is_rejected():
    ens = ensemble(catalog.process("bm"), N=10, T=0.5)
    with pytest.raises(SimulationError):
        evaluate_stopping(ens, StoppingRule.deterministic(1.0))


# ---------------------------------------------------------------- running sup


def test_running_sup_pure_drift():
    ens = ensemble(catalog.brownian(1.0, 0.0), N=20, T=1.0)
    sup = running_sup_g(ens, exp_beta(1.0))
    assert np.allclose(sup.sup_g[:, -1], math.e, rtol=1e-14)


def test_running_sup_of_bounded_weight():
    M = 4.0
    ens = ensemble(catalog.process("cp_gauss"), N=2000, T=1.0)
    sup = running_sup_g(ens, cap(exp_beta(1.0), M))
    assert np.all(sup.sup_g <= M) and np.all(sup.g_of_sup <= M)


@pytest.mark.parametrize("name", ["bm", "poisson", "tempered"])
def test_radial_increasing_weight_tracks_coincide(name):
    ens = ensemble(catalog.process(name), N=2000, T=1.0)
    sup = running_sup_g(ens, exp_beta(1.0))
    assert np.allclose(sup.sup_g, sup.g_of_sup, rtol=1e-13)


def test_bm_sup_track_between_moment_and_doubling_bound():
    N = 50_000
    g = exp_beta(1.0)
    ens = ensemble(catalog.process("bm"), N=N, T=1.0, seed=4)
    sup = running_sup_g(ens, g)
    half = ens.index_of(0.5)
    mean_sup, se_sup = sup.sup_g[:, -1].mean(), sup.sup_g[:, -1].std() / math.sqrt(N)
    gX = g(ens.state_at(1.0))
    assert mean_sup >= gX.mean()
    kT = sup.sup_g[:, half].mean()
    kT_se = sup.sup_g[:, half].std() / math.sqrt(N)
    rhs = kT * (1 + g.c * kT)
    assert mean_sup <= rhs + 3 * math.hypot(se_sup, kT_se * (1 + 2 * g.c * kT))


# ---------------------------------------------------------------- invariants


@pytest.mark.parametrize("name", list(catalog.PROCESSES))
def test_marginal_characteristic_function(name):
    N = 20_000
    ens = ensemble(catalog.process(name), N=N, T=1.0, seed=12)
    sim = ens.simulated.triplet
    xis = np.linspace(0.15, 6.0, 20)
    for t in (0.5, 1.0):
        x = ens.state_at(t)[:, 0]
        for xi in xis:
            emp = np.mean(np.exp(1j * xi * x))
            ref = np.exp(-t * eval_psi(sim, [xi]))
            assert abs(emp - ref) < 4 / math.sqrt(N), (t, xi)


@pytest.mark.parametrize("name", list(catalog.PROCESSES))
def test_disjoint_increments_uncorrelated(name):
    N = 20_000
    ens = ensemble(catalog.process(name), N=N, T=1.0, seed=21)
    x0, xh, x1 = ens.state_at(0.0)[:, 0], ens.state_at(0.5)[:, 0], ens.state_at(1.0)[:, 0]
    a, b = xh - x0, x1 - xh
    if name == "power_law":
        # infinite variance: correlate a bounded transform instead
        a, b = np.tanh(a), np.tanh(b)
    assert abs(np.corrcoef(a, b)[0, 1]) < 4 / math.sqrt(N)
    # stationarity: both halves have the same law
    assert stats.ks_2samp(a, b).pvalue > 1e-4


def test_cadlag_reconstruction_without_diffusion():
    b = 0.3
    ens = ensemble(catalog.poisson(1.5, size=-0.7, b=b), N=500, T=1.0)
    jumps = np.zeros(ens.states.shape[:2])
    np.add.at(jumps, (ens.jump_path, ens.jump_step), ens.jump_size[:, 0])
    inc = np.diff(ens.states[:, :, 0], axis=1) - jumps[:, 1:]
    # the small atom is compensated: drift b - 1.5 * (-0.7)
    assert np.allclose(inc, (b + 1.05) * np.diff(ens.times), atol=1e-14)


@pytest.mark.parametrize("delta", [0.1, 0.3])
def test_gaussian_approx_matches_removed_second_moment(delta):
    tr = catalog.process("tempered")
    dens = tr.nu.densities[0]
    f = lambda y: y * y * dens.pdf(np.array([[y]]))[0]
    ref = 2 * integrate.quad(f, 0, delta, epsabs=1e-14, epsrel=1e-12)[0]
    sim = truncated_triplet(tr, delta, "gaussian_approx")
    assert float(sim.sigma_delta[0, 0]) == pytest.approx(ref, rel=1e-8)
    assert float(sim.triplet.Q[0, 0]) == pytest.approx(ref, rel=1e-8)


def test_small_jump_modes_differ_only_where_documented():
    tr = catalog.tempered_stable(1.5, 3.0, b=0.2)
    disc, comp, gauss = (truncated_triplet(tr, 0.2, m) for m in ("discard", "compensate_drift", "gaussian_approx"))
    assert comp.triplet.b[0] == gauss.triplet.b[0] == 0.2
    assert comp.triplet.Q[0, 0] == disc.triplet.Q[0, 0] == 0.0
    # discard drops the compensator of the kept jumps in [δ, 1)
    assert disc.triplet.b[0] == pytest.approx(0.2 + disc.removed_mean[0], abs=1e-15)
    assert disc.drift[0] == pytest.approx(0.2, abs=1e-12)
    # symmetric measure: the small-jump compensator vanishes
    assert abs(disc.removed_mean[0]) < 1e-12


def test_finite_activity_measure_untouched():
    tr = catalog.process("cp_gauss")
    sim = truncated_triplet(tr, 0.1)
    assert sim.triplet == tr and np.all(sim.sigma_delta == 0)


def test_same_seed_same_ensemble_any_worker_count():
    cfg = dict(N=3 * BLOCK + 17, T=1.0, dt=1 / 32, seed=99)
    tr = catalog.process("tempered")
    digests = {sample_paths(tr, SimConfig(workers=w, **cfg)).digest() for w in (1, 3)}
    assert len(digests) == 1
    assert sample_paths(tr, SimConfig(workers=1, **{**cfg, "seed": 100})).digest() not in digests


def test_halving_dt_refines_bm_without_moving_coarse_nodes():
    tr = catalog.process("bm")
    a = ensemble(tr, N=100, T=1.0, dt=1 / 16, seed=2)
    b = ensemble(tr, N=100, T=1.0, dt=1 / 32, seed=2)
    assert np.allclose(a.states, b.states[:, ::2], rtol=0, atol=1e-14)


def test_time_integral_of_constant_is_elapsed_time():
    ens = ensemble(catalog.process("poisson"), N=400, T=1.0)
    until = np.linspace(0.0, 1.0, ens.N)
    vals = time_integral(ens, lambda x: np.ones(len(x)), until)
    assert np.allclose(vals, until, atol=1e-13)


def test_time_integral_of_drift_path():
    ens = ensemble(catalog.brownian(1.0, 0.0), N=10, T=1.0)
    vals = time_integral(ens, lambda x: x[:, 0], np.full(ens.N, 0.8))
    assert np.allclose(vals, 0.32, atol=1e-13)


def test_dump_header_and_rows(tmp_path):
    ens = ensemble(catalog.process("poisson"), N=5, T=0.25, dt=1 / 8, seed=7)
    out = tmp_path / "ens.csv"
    ens.dump(out)
    lines = out.read_text().splitlines()
    assert lines[0].startswith("# seed=7 ")
    assert lines[1] == f"# sha256={ens.digest()}"
    assert lines[2] == "path,time,x0,jump"
    assert len(lines) - 3 == 5 * len(ens.times) + ens.jump_path.size
