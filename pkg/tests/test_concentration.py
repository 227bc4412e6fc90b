import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from radial_aggregation.concentration import (
    BootstrapReport,
    SingularProfile,
    atom_mass_under_map1,
    bootstrap_verdict,
    bound_constants,
    closed_form_flow,
    discretize_profile,
    evaluate_hat,
    fit_domination,
    profile_cumulative,
    profile_quantile,
    pushforward_critical_closed_form,
    velocity_lower_bound,
)
from radial_aggregation.kernel import KernelParams, phi, velocity
from radial_aggregation.lagrangian import SolverConfig, run
from radial_aggregation.radial_measure import (
    RadialMeasure,
    dominates_partial,
    is_more_concentrated,
    smooth_bump,
    uniform_ball,
)

P12 = KernelParams(1.0, 2)


def quantile_edges(x, n_bins):
    """Edges putting equal particle counts in each bin."""
    x = np.sort(x)
    cuts = np.linspace(0, x.size, n_bins + 1).astype(int)[1:-1]
    return np.concatenate([[x[0]], 0.5 * (x[cuts - 1] + x[cuts]), [x[-1]]])


# -- profiles ---------------------------------------------------------------------------

def test_profile_validation():
    with pytest.raises(ValueError):
        SingularProfile.power_law(P12, 1.2)
    with pytest.raises(ValueError, match="non-integrable"):
        SingularProfile.power_law(KernelParams(1.5, 2), 0.6)
    with pytest.raises(ValueError):
        SingularProfile.log_corrected(P12, 0.4)  # below (d+alpha-2)/d = 0.5
    with pytest.raises(ValueError, match="r0 < 1"):
        SingularProfile.log_corrected(P12, 0.8, r0=1.0)
    with pytest.raises(ValueError):
        SingularProfile("gaussian", P12)
    with pytest.raises(ValueError):
        SingularProfile.critical(KernelParams(2.0, 2))
    with pytest.raises(ValueError):
        SingularProfile.parse("power", P12)


def test_parse_round_trip():
    assert SingularProfile.parse("power:0.3", P12).shape == 0.3
    assert SingularProfile.parse("critical", P12).family == "critical"
    log = SingularProfile.parse("log:0.8", P12)
    assert log.family == "log" and log.r0 == 0.5


def test_hat_examples():
    crit = SingularProfile.critical(P12)
    assert evaluate_hat(crit, 0.5) == pytest.approx(2 * math.pi)
    for prof in (crit, SingularProfile.power_law(P12, 0.4, r0=0.7),
                 SingularProfile.log_corrected(P12, 0.9, r0=0.6)):
        assert evaluate_hat(prof, prof.r0 * 1.01) == 0.0
    log = SingularProfile.log_corrected(KernelParams(1.5, 3), 0.9, r0=0.9)
    assert evaluate_hat(log, math.exp(-1.0)) == pytest.approx(4 * math.pi * math.exp(0.5))


def test_log_profile_rejects_radius_one():
    # a log-corrected profile bypassing the constructor check still refuses r >= 1
    prof = SingularProfile.log_corrected(P12, 0.8, r0=0.9)
    object.__setattr__(prof, "r0", 2.0)
    with pytest.raises(ValueError):
        evaluate_hat(prof, 1.5)


@pytest.mark.parametrize("text,alpha,dim", [("power:0.3", 1.0, 2), ("power:0.2", 1.5, 3),
                                            ("critical", 0.5, 3), ("log:0.8", 1.0, 2),
                                            ("log:0.95", 1.5, 2)])
def test_cumulative_matches_quadrature(text, alpha, dim):
    prof = SingularProfile.parse(text, KernelParams(alpha, dim), r0=0.6, c=1.3)
    for r in (1e-4, 0.05, 0.3, 0.6):
        ref, _ = integrate.quad(lambda s: evaluate_hat(prof, s), 0.0, r, limit=200,
                                epsabs=0.0, epsrel=1e-12, points=[r * 1e-6, r * 1e-3])
        assert profile_cumulative(prof, r) == pytest.approx(ref, rel=1e-8)
    assert profile_cumulative(prof, 5.0) == pytest.approx(prof.total_mass)


@pytest.mark.parametrize("text", ["power:0.3", "critical", "log:0.8"])
def test_quantile_inverts_cumulative(text):
    prof = SingularProfile.parse(text, P12, r0=0.4)
    q = np.array([1e-9, 0.01, 0.3, 0.77, 1.0 - 1e-9])
    r = profile_quantile(prof, q)
    assert np.allclose(profile_cumulative(prof, r) / prof.total_mass, q, rtol=1e-9, atol=1e-15)


def test_discretization_and_normalization():
    prof = SingularProfile.log_corrected(P12, 0.8, r0=0.3).normalized()
    assert prof.total_mass == pytest.approx(1.0)
    mu = discretize_profile(prof, 1000)
    assert mu.total_mass == pytest.approx(1.0)
    assert mu.support_radius < 0.3
    assert np.allclose(mu.weights, 1e-3)


# -- constants and bounds ---------------------------------------------------------------

def test_bound_constants_values():
    k = bound_constants(P12)
    assert k.C1 == pytest.approx(phi(P12, 1.0), rel=1e-10)
    assert k.C1 == pytest.approx(2.0 / math.pi, rel=1e-10)
    assert k.C2 == pytest.approx(0.5, rel=1e-6)
    for a, d in [(1.5, 2), (0.5, 3), (1.0, 3)]:
        kk = bound_constants(KernelParams(a, d))
        assert 0.0 < kk.C2 <= kk.C1


def test_lower_bound_examples():
    power = SingularProfile.power_law(P12, 0.5)
    expect = 2 * math.pi * phi(P12, 1.0) * 0.01 ** 0.5 / 0.5
    assert velocity_lower_bound(power, 0.01) == pytest.approx(expect, rel=1e-10)
    crit = SingularProfile.critical(P12, r0=0.5)
    assert velocity_lower_bound(crit, 0.5 * (1 - 1e-12)) == pytest.approx(0.0, abs=1e-10)
    with pytest.raises(ValueError):
        velocity_lower_bound(crit, 0.5)
    log = SingularProfile.log_corrected(P12, 0.8, r0=0.5)
    x = 0.01
    integral, _ = integrate.quad(lambda r: 1.0 / (-math.log(r)) ** 0.8 / r, x, 0.5)
    assert velocity_lower_bound(log, x) == pytest.approx(2 * math.pi * 0.5 * x * integral, rel=1e-8)


@pytest.mark.parametrize("text", ["power:0.3", "critical", "log:0.8"])
def test_lower_bound_holds_for_discretized_profile(text):
    prof = SingularProfile.parse(text, P12, r0=0.5).normalized()
    mu = discretize_profile(prof, 4000)
    x = np.geomspace(5e-4, 0.45, 20)
    assert np.all(np.abs(velocity(P12, mu, x)) >= velocity_lower_bound(prof, x))


def test_discrete_velocity_approaches_bound_from_above_as_n_grows():
    # below the particle resolution the discrete field undershoots; refinement fixes it
    prof = SingularProfile.log_corrected(P12, 0.8, r0=0.5).normalized()
    x = 5e-5
    ratios = [abs(velocity(P12, discretize_profile(prof, n), x)) / velocity_lower_bound(prof, x)
              for n in (1000, 4000, 10000)]
    assert ratios[0] < ratios[1] < ratios[2]


# -- comparison flows ----------------------------------------------------------------

def test_flow_examples():
    assert closed_form_flow(1, 1.0, 0.5, 0.2, 1.0) == 0.0
    assert closed_form_flow(2, 3.0, 0.0, 0.37, 0.0) == 0.37
    assert closed_form_flow(3, 2.0, 0.6, 0.37, 0.0) == pytest.approx(0.37, rel=1e-15)
    with pytest.raises(ValueError):
        closed_form_flow(4, 1.0, 0.5, 0.2, 1.0)
    with pytest.raises(ValueError):
        closed_form_flow(2, 1.0, 0.0, 1.0, 1.0)


def test_map3_solves_its_ode():
    C, beta = 1.0, 0.5
    rng = np.random.default_rng(3)
    with mpmath.workdps(40):
        for r0, t in zip(rng.uniform(0.01, 0.99, 20), rng.uniform(0.0, 2.0, 20)):
            r0m = mpmath.mpf(float(r0))

            def flow(s):
                return mpmath.exp(-(C * beta * s + (-mpmath.log(r0m)) ** beta) ** (1 / beta))

            tm = mpmath.mpf(float(t)) + mpmath.mpf("1e-3")
            drdt = mpmath.diff(flow, tm)
            r = flow(tm)
            resid = drdt + C * r * (-mpmath.log(r)) ** (1 - beta)
            assert abs(float(resid)) <= 1e-10
            got = closed_form_flow(3, C, beta, float(r0), float(tm))
            assert got == pytest.approx(float(r), rel=1e-13)


def test_map1_and_map2_solve_their_odes():
    C, eps, r0, t, h = 1.3, 0.4, 0.6, 0.2, 1e-6
    for k, rhs in ((1, lambda r: -C * r ** (1 - eps)), (2, lambda r: -C * r * (-math.log(r)))):
        r = closed_form_flow(k, C, eps, r0, t)
        fd = (closed_form_flow(k, C, eps, r0, t + h) - closed_form_flow(k, C, eps, r0, t - h)) / (2 * h)
        assert fd == pytest.approx(rhs(r), rel=1e-7)


@given(st.sampled_from([1, 2, 3]), st.floats(0.1, 3.0), st.floats(0.1, 0.9),
       st.floats(0.01, 0.98), st.floats(0.001, 0.3), st.floats(0.0, 3.0), st.floats(0.0, 1.0))
def test_flows_monotone(k, C, shape, r, dr, t, dt):
    r2 = min(r + dr, 0.99)
    a = closed_form_flow(k, C, shape, r, t)
    assert closed_form_flow(k, C, shape, r, t + dt) <= a
    assert closed_form_flow(k, C, shape, r2, t) >= a
    if k in (2, 3):
        assert a > 0.0


def test_map1_reaches_origin_exactly():
    C, eps, r = 2.0, 0.3, 0.5
    t_hit = r ** eps / (eps * C)
    assert closed_form_flow(1, C, eps, r, t_hit * (1 - 1e-9)) > 0.0
    assert closed_form_flow(1, C, eps, r, t_hit) == 0.0
    assert closed_form_flow(2, C, eps, r, 3.0) > 0.0


def test_pushforward_at_time_zero_is_profile():
    prof = SingularProfile.critical(KernelParams(1.5, 2), r0=0.8, c=0.7)
    r = np.array([0.01, 0.3, 0.79])
    got = pushforward_critical_closed_form(prof.params, 2.0, 0.0, r, c=0.7, r0=0.8)
    assert np.allclose(got, evaluate_hat(prof, r), rtol=1e-14)


@given(st.floats(1e-3, 5.0), st.floats(0.1, 3.0), st.sampled_from([(1.0, 2), (1.5, 3), (0.5, 3)]))
def test_pushforward_more_singular_than_critical(t, C, ad):
    p = KernelParams(*ad)
    r = np.array([1e-3, 1e-2])
    vals = pushforward_critical_closed_form(p, C, t, r)
    expo = -math.log(vals[1] / vals[0]) / math.log(10.0)
    assert expo > p.alpha - 1.0


@pytest.mark.parametrize("alpha,dim", [(1.0, 2), (1.5, 3), (0.5, 3)])
def test_particle_pushforward_matches_closed_form(alpha, dim):
    p = KernelParams(alpha, dim)
    prof = SingularProfile.critical(p, r0=0.5)
    mu = discretize_profile(prof, 20000)
    C, t = 1.0, 0.7
    moved = closed_form_flow(2, C, 0.0, mu.radii, t)
    edges = quantile_edges(moved, 20)
    mass, _ = np.histogram(moved, edges, weights=mu.weights)
    decay = math.exp(-C * t)
    e = alpha - 1.0 + (2.0 - alpha) * (1.0 - decay)
    exact = prof.weight * decay * (edges[1:] ** (1 - e) - edges[:-1] ** (1 - e)) / (1 - e)
    assert np.max(np.abs(mass / exact - 1.0)[1:-1]) <= 0.03
    # the density formula integrates to the same bin masses
    k = 7
    quad, _ = integrate.quad(lambda r: pushforward_critical_closed_form(p, C, t, r),
                             edges[k], edges[k + 1])
    assert quad == pytest.approx(exact[k], rel=1e-8)


@pytest.mark.parametrize("eps,alpha,dim", [(0.3, 1.0, 2), (0.5, 1.0, 2), (0.2, 1.5, 3), (0.7, 0.5, 3)])
def test_atom_mass_under_map1(eps, alpha, dim):
    prof = SingularProfile.power_law(KernelParams(alpha, dim), eps, r0=0.6, c=0.8)
    C = 1.7
    for t in (1e-6, 1e-3, 0.05):
        reach = (eps * C * t) ** (1 / eps)
        ref, _ = integrate.quad(lambda r: evaluate_hat(prof, r), 0.0, min(reach, 0.6),
                                epsabs=0.0, epsrel=1e-13, limit=200)
        got = atom_mass_under_map1(prof, C, t)
        assert got > 0.0
        assert abs(got - ref) <= 1e-10 * ref
    assert atom_mass_under_map1(prof, C, 1e6) == pytest.approx(prof.total_mass, rel=1e-12)
    with pytest.raises(ValueError):
        atom_mass_under_map1(prof, C, 0.0)
    with pytest.raises(ValueError):
        atom_mass_under_map1(SingularProfile.critical(P12), C, 1.0)


def test_atom_mass_vanishes_continuously():
    prof = SingularProfile.power_law(P12, 0.3)
    vals = [atom_mass_under_map1(prof, 1.0, t) for t in (1e-2, 1e-4, 1e-6, 1e-8)]
    assert all(v > 0.0 for v in vals)
    assert all(b < a for a, b in zip(vals, vals[1:]))
    # mass scales like t^((2-alpha-eps)/eps) below the support radius
    q = (2.0 - 1.0 - 0.3) / 0.3
    assert vals[3] / vals[2] == pytest.approx(1e-2 ** q, rel=1e-10)


# -- verdict --------------------------------------------------------------------------

def test_fit_domination_on_profile_itself():
    prof = SingularProfile.critical(P12, r0=0.5).normalized()
    rho = discretize_profile(prof, 2000)
    c, r1, mu = fit_domination(rho, SingularProfile.critical(P12))
    assert c > 0.0 and 0.0 < r1 <= rho.support_radius
    assert mu.total_mass <= 1.0 + 1e-12
    assert dominates_partial(rho, mu)


def test_fit_domination_fails_for_bounded_density():
    rho = smooth_bump(2, 2000)
    _, _, bounded_fit = fit_domination(rho, SingularProfile.critical(P12))
    sing = discretize_profile(SingularProfile.critical(P12, r0=0.5).normalized(), 2000)
    _, _, singular_fit = fit_domination(sing, SingularProfile.critical(P12))
    # a bounded density can only dominate a much smaller critical mass
    bounded_mass = 0.0 if bounded_fit is None else bounded_fit.total_mass
    assert bounded_mass < 0.5 * singular_fit.total_mass


def test_verdict_on_atom_is_trivially_true():
    traj = run(P12, RadialMeasure.atom(), SolverConfig(dt=0.01, t_end=0.1))
    rep = bootstrap_verdict(traj, P12, (0.02, 0.05, 0.1))
    assert rep.passed
    assert [c.name for c in rep.checks] == ["critical_domination", "power_domination", "atom"]


def test_verdict_requires_ordered_times():
    with pytest.raises(ValueError):
        bootstrap_verdict([(0.0, RadialMeasure.atom())], P12, (0.2, 0.1, 0.3))


@pytest.fixture(scope="module")
def concentration_runs():
    log = SingularProfile.log_corrected(P12, 0.8, r0=0.08).normalized()
    cfg = SolverConfig(dt=1e-3, t_end=0.05, output_every=10)
    sing = run(P12, discretize_profile(log, 10000), cfg)
    bump = run(P12, smooth_bump(2, 10000, radius=0.08), cfg)
    return sing, bump


def test_log_profile_concentrates_while_bump_does_not(concentration_runs):
    sing, bump = concentration_runs
    assert sing.final.atom_mass > 0.0
    assert bump.final.atom_mass == 0.0


def test_verdict_on_simulations(concentration_runs, tmp_path):
    sing, bump = concentration_runs
    rep = bootstrap_verdict(sing, P12, (0.01, 0.03, 0.05))
    assert rep.passed, rep.text()
    neg = bootstrap_verdict(bump, P12, (0.01, 0.03, 0.05))
    assert not neg.checks[2].passed
    rep.write_csv(tmp_path / "v.csv")
    lines = (tmp_path / "v.csv").read_text().splitlines()
    assert lines[0] == "check,time,passed,amplitude,support,value"
    assert len(lines) == 4
    assert rep.text().startswith("PASS critical_domination")
    assert isinstance(neg, BootstrapReport)


def test_comparison_principle_consistency():
    p = KernelParams(1.5, 2)
    cfg = SolverConfig(dt=2e-3, t_end=0.6, output_every=25)
    tight = run(p, uniform_ball(2, 800, radius=0.7), cfg)
    loose = run(p, uniform_ball(2, 800), cfg)
    assert is_more_concentrated(tight.states[0].measure, loose.states[0].measure)
    for a, b in zip(tight.states, loose.states):
        assert a.time == b.time
        assert is_more_concentrated(a.measure, b.measure, tol=1e-12)
