import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slelab import loewner as lw
from slelab import observables as ob
from slelab import verify as vf
from slelab.driver import DriftMode, DrivingConfig, simulate_batch
from slelab.partition import Geometry, SleParams

# Survival P(tau > t) of the boundary point e^{i theta} under radial SLE(6),
# computed by an independent Gegenbauer eigenfunction expansion of the
# angular diffusion and frozen here.
SURVIVAL_ORACLE = {
    math.pi / 2: (0.76227, 0.59332, 0.46207, 0.35986),
    math.pi: (0.85439, 0.66597, 0.51866, 0.40393),
}


def test_neumaier_sum_is_compensated():
    s = vf.NeumaierSum()
    for x in (1e16, 1.0, -1e16, 1.0):
        s.add(x)
    assert s.value == 2.0
    other = vf.NeumaierSum()
    other.add_array(np.full(10, 0.1))
    s.merge(other)
    assert s.value == pytest.approx(3.0, abs=1e-15)


@given(xs=st.lists(st.complex_numbers(max_magnitude=1e3, allow_nan=False, allow_infinity=False),
                   min_size=2, max_size=40), cut=st.integers(0, 40))
@settings(max_examples=60)
def test_moments_merge_matches_single_pass(xs, cut):
    cut = min(cut, len(xs))
    whole = vf.Moments(shift=1 + 1j)
    whole.add(np.array(xs))
    a, b = vf.Moments(shift=1 + 1j), vf.Moments(shift=1 + 1j)
    a.add(np.array(xs[:cut]))
    b.add(np.array(xs[cut:]))
    a.merge(b)
    assert a.n == whole.n
    assert a.mean == pytest.approx(np.mean(xs), rel=1e-9, abs=1e-9)
    # one-pass variance loses about sqrt(eps) * scale to cancellation
    scale = 1.0 + max(abs(x) for x in xs)
    assert a.std == pytest.approx(whole.std, rel=1e-6, abs=1e-6 * scale)
    two_pass = np.sqrt(np.sum(np.abs(np.array(xs) - np.mean(xs)) ** 2) / (len(xs) - 1))
    assert whole.std == pytest.approx(two_pass, rel=1e-6, abs=1e-6 * scale)


def test_moments_shift_mismatch():
    with pytest.raises(ValueError):
        vf.Moments(shift=1).merge(vf.Moments())
    assert math.isnan(vf.Moments().mean.real)


@pytest.mark.parametrize("suite", [
    lambda: vf.moebius_suite(60),
    lambda: vf.nullvector_suite(20),
    lambda: vf.bpz_suite(20),
    lambda: vf.drift_suite(20),
    lambda: vf.recursion_suite(20),
    lambda: vf.sle0_suite(),
], ids=["moebius", "nullvector", "bpz", "drift", "recursion", "sle0"])
def test_deterministic_suites_pass(suite):
    res = suite()
    assert res.passed, res.line()
    assert res.line().startswith("PASS")
    assert res.to_record()["passed"] is True


def test_suites_with_controls_report_them():
    res = vf.nullvector_suite(20)
    assert res.control_median > res.control_tol
    assert "control median" in res.line()


def test_integrator_suite():
    results = vf.integrator_suite(dt=1e-3)
    assert [r.name for r in results] == ["loewner-chordal-closed-form", "loewner-radial-conserved",
                                         "loewner-rk4-order"]
    assert all(r.passed for r in results), [r.line() for r in results]


def test_hadamard_suite_short():
    for r in vf.hadamard_suite(n_paths=2, t_end=0.002):
        assert r.passed, r.line()


def test_failing_suite_line():
    res = vf.SuiteResult("demo", 3, 1.0, 0.5)
    assert not res.passed and res.line().startswith("FAIL")
    ctrl = vf.SuiteResult.with_controls("demo", 3, 0.0, 0.5, [1e-5, 1e-5, 1.0], 1e-3)
    assert not ctrl.passed
    assert ctrl.control_frac_below == pytest.approx(2 / 3)


def test_frozen_survival_oracle_is_self_consistent():
    # the slowest decay rate is 2 h_q = 1/4 at kappa = 6
    for vals in SURVIVAL_ORACLE.values():
        rates = np.diff(np.log(vals))
        assert np.allclose(rates, -0.25, atol=2e-3)
    assert 2 * ob.lsw_hq(SleParams.forward(6.0), 0.0) == pytest.approx(0.25)


def test_survival_matches_oracle():
    cfg = DrivingConfig(SleParams.forward(6.0), Geometry.RADIAL, seed=3, dt=1e-2, t_end=2.0)
    res = vf.exponent_regression(cfg, [1.0, 2.0], 4000)
    for got, want in zip(res.survival, SURVIVAL_ORACLE[math.pi / 2]):
        se = math.sqrt(want * (1 - want) / res.paths)
        assert abs(got - want) < 4 * se
    assert res.expected_slope == pytest.approx(-0.25)
    assert res.ci[0] < res.slope < res.ci[1]


def test_exponent_regression_rejects_bad_input():
    chordal = DrivingConfig(SleParams.forward(6.0), Geometry.CHORDAL)
    with pytest.raises(ValueError):
        vf.exponent_regression(chordal, [1.0, 2.0], 10)
    radial = DrivingConfig(SleParams.forward(6.0), Geometry.RADIAL, dt=1e-2, t_end=1.0)
    with pytest.raises(ValueError):
        vf.exponent_regression(radial, [1.0], 10)


def _ss_obs(p):
    return ob.ObservableSpec("schramm_sheffield", p)


def test_martingale_schramm_sheffield_small():
    p = SleParams.forward(4.0)
    cfg = DrivingConfig(p, seed=1, dt=1e-3, t_end=0.25)
    rep = vf.martingale_test(_ss_obs(p), cfg, (0.1, 0.25), 2000, z=0.5 + 1j, name="ss4")
    assert rep.passed, rep.line()
    assert rep.line().startswith("PASS martingale ss4")
    for cp in rep.checkpoints:
        assert cp.n_alive + cp.n_swallowed == 2000
        assert cp.M0 == pytest.approx(ob.eval_schramm_sheffield(lw.LoewnerState.new([0.5 + 1j]), 0.5 + 1j, p))
    rec = rep.to_record()
    assert rec["status"] == "pass" and len(rec["checkpoints"]) == 2


def test_martingale_zero_observable_passes_trivially():
    p = SleParams.forward(2.0)
    cfg = DrivingConfig(p, Geometry.RADIAL, seed=2, dt=1e-3, t_end=0.1)
    rep = vf.martingale_test(ob.ObservableSpec("zero", p), cfg, (0.1,), 50, z=0.2 + 0.3j)
    assert rep.passed
    assert rep.checkpoints[0].std_err == 0


def test_martingale_detects_a_non_martingale():
    # |g_t(z)|^2 grows like 4t under the chordal flow, so its mean drifts away from M0
    p = SleParams.forward(4.0)
    cfg = DrivingConfig(p, seed=4, dt=1e-3, t_end=0.5)

    def growing(d: ob.PointData) -> np.ndarray:
        return np.abs(d.g) ** 2

    rep = vf.martingale_test(growing, cfg, (0.5,), 500, z=1j, name="growing")
    assert not rep.passed
    assert rep.status == "fail"
    assert rep.line().startswith("FAIL")


def test_martingale_reuses_batch():
    p = SleParams.forward(4.0)
    cfg = DrivingConfig(p, seed=5, dt=1e-3, t_end=0.25)
    batch = simulate_batch(cfg, [0.5 + 1j], 300, [0.0, 0.1, 0.25])
    a = vf.martingale_test(_ss_obs(p), cfg, (0.1, 0.25), 200, z=0.5 + 1j, batch=batch)
    b = vf.martingale_test(_ss_obs(p), cfg, (0.1, 0.25), 200, z=0.5 + 1j)
    assert [c.mean for c in a.checkpoints] == [c.mean for c in b.checkpoints]
    with pytest.raises(ValueError):
        vf.martingale_test(_ss_obs(p), cfg, (0.1, 0.25), 400, z=0.5 + 1j, batch=batch)
    with pytest.raises(ValueError):
        vf.martingale_test(_ss_obs(p), cfg, (0.2,), 100, z=0.5 + 1j, batch=batch)


def test_restriction_small_run():
    hull = ob.VerticalSlit(1.0, 0.3, 8)
    res = vf.restriction_probability_test(hull, 400, dt=2e-3, t_end=0.5)
    assert res.p_formula == pytest.approx((1 / math.sqrt(1.09)) ** (5 / 8), rel=1e-12)
    assert res.paths == 400 and res.hits <= 400
    assert res.hits_half <= res.hits
    assert 0 <= res.truncation_bias <= res.hits / 400
    assert abs(res.p_mc - res.p_formula) < 5 * max(res.std_err, 0.02) + 0.05
    assert set(res.to_record()) >= {"p_mc", "p_formula", "rel_error", "truncation_bias"}


def test_random_tau_and_background_are_neutral():
    rng = np.random.default_rng(0)
    for geom in Geometry:
        p = SleParams.forward(3.0)
        tau = vf.random_tau(rng, p, geom)
        assert abs(sum(tau.charges)) < 1e-12
        bg = vf.random_background(rng, p, geom)
        assert bg.b == pytest.approx(p.b)


def test_rho_config_drift_mode_is_used():
    p = SleParams.forward(4.0)
    cfg = DrivingConfig(p, Geometry.CHORDAL, DriftMode.RHO_SUM, seed=1, dt=1e-3, t_end=0.1,
                        force_points=[1.0], rho=[1.0])
    batch = simulate_batch(cfg, [1j], 3, [0.0, 0.1])
    assert batch.n_force == 1
