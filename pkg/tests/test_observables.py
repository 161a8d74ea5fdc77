import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slelab import loewner as lw
from slelab import observables as ob
from slelab.charges import DISC, Divisor, Point, Side
from slelab.coulomb import expectation_vertex
from slelab.partition import Geometry, SleParams, standard_radial_background, with_seed


def _radial_data(g=0.3 + 0.2j, g1=0.7 - 0.4j, theta=0.5, t=0.2) -> ob.PointData:
    arr = lambda v: np.asarray([v])  # noqa: E731
    return ob.PointData(lw.RADIAL, arr(g), arr(g1), arr(0.1 + 0.2j), arr(-0.3j), arr(np.log(g1)), arr(np.log(g)),
                        arr(theta), arr(t))


def _state(z, geometry=lw.RADIAL, backward=False, driving=0.0):
    return lw.LoewnerState.new([z], geometry=geometry, backward=backward, driving=driving)


def test_schramm_sheffield_initial_values():
    p = SleParams.forward(4.0)
    assert ob.eval_schramm_sheffield(_state(1j, lw.CHORDAL), 1j, p) == pytest.approx(p.a * math.pi)
    assert ob.eval_schramm_sheffield(_state(0.7, lw.CHORDAL), 0.7, p) == 0.0
    assert ob.eval_schramm_sheffield(_state(0.4), 0.4, p) == pytest.approx(0.0, abs=1e-15)


def test_swallowed_point_is_rejected():
    s = lw.evolve(_state(0.5), np.zeros(3001), 1e-4)
    assert not s.alive[0]
    with pytest.raises(ob.SwallowedPointError):
        ob.eval_lsw_kappa6(s, 0.5)


@pytest.mark.parametrize("kappa", [2.0, 8 / 3, 4.0, 6.0])
def test_vertex_poisson_family(kappa):
    p = SleParams.forward(kappa)
    d = _radial_data()
    got = ob.vertex_1pt(d, p, -p.a, -p.a, p.a, p.a)
    w, w1 = d.w, d.w1
    expected = np.abs(w1 / w) ** (1 - 2 / kappa) * ((1 - np.abs(w) ** 2) / np.abs(1 - w) ** 2) ** (2 / kappa)
    assert got[0] == pytest.approx(expected[0], rel=1e-12)
    if kappa == 2.0:
        assert got[0] == pytest.approx(ob.poisson_ratio(d)[0], rel=1e-12)


def test_vertex_trivial_and_neutrality():
    p = SleParams.forward(3.0)
    assert ob.vertex_1pt(_radial_data(), p, 0, 0, 0, 0)[0] == 1
    with pytest.raises(ValueError):
        ob.vertex_1pt(_radial_data(), p, 0.3, 0, 0, 0)
    chordal = ob.PointData.from_state(_state(1j, lw.CHORDAL), 1j)
    with pytest.raises(ValueError):
        ob.vertex_1pt(chordal, p, 0, 0, 0, 0)


@pytest.mark.parametrize("kappa", [2.0, 8 / 3, 4.0])
@pytest.mark.parametrize("tp, tm", [(0.4, 0.4), (0.3, -0.5), (-0.2, 0.9)])
def test_vertex_matches_coulomb_ratio(kappa, tp, tm):
    p = SleParams.forward(kappa)
    z = 0.3 + 0.4j
    tq = -(tp + tm) / 2
    beta = with_seed(standard_radial_background(p), 0.0, p, Geometry.RADIAL)
    tau = Divisor(((Point(z, False, Side.INTERIOR), tp), (Point(1 / z.conjugate(), False, Side.REFLECTED), tm),
                   (Point(0j), tq), (Point.infinity(Side.REFLECTED), tq)), p.b)
    lc = expectation_vertex(beta, tau, DISC)
    v = ob.eval_vertex_1pt(_state(z), z, p, tp, tm, tq, tq)
    assert math.log(abs(v)) == pytest.approx(lc.log_modulus, abs=1e-12)


def test_lsw_kappa6_initial_values():
    for z in (0.2, 0.5, 0.9):
        v = ob.eval_lsw_kappa6(_state(z), z)
        assert v.imag == 0
        assert v.real == pytest.approx((1 - z) ** (1 / 3) * z ** (-1 / 6), rel=1e-14)
    assert abs(ob.eval_lsw_kappa6(_state(1 - 1e-9), 1 - 1e-9)) < 1e-2


def test_lsw_exponents():
    p = SleParams.forward(6.0)
    assert ob.lsw_sigma(p, 0.0) == pytest.approx(p.a)
    assert 2 * ob.lsw_hq(p, 0.0) == pytest.approx(0.25, abs=1e-14)


@pytest.mark.parametrize("theta", [0.5, 1.7, math.pi, 5.0])
def test_lsw_boundary_initial_value(theta):
    p = SleParams.forward(6.0)
    z = cmath.exp(1j * theta)
    got = ob.eval_lsw_boundary_exponent(_state(z), theta, 0.0, p)
    assert got == pytest.approx((math.sin(theta / 2) ** 2) ** (p.a * ob.lsw_sigma(p, 0.0) / 2), rel=1e-12)
    if theta == math.pi:
        assert got == pytest.approx(1.0, abs=1e-15)


def test_sle0_invariants_real_point():
    first0, second0 = ob.eval_sle0_invariants(_state(0.5), 0.5)
    assert first0 == 0.0
    assert second0.imag == 0


@pytest.mark.parametrize("z", [0.3 + 0.4j, -0.2 + 0.5j, -0.5])
def test_sle0_invariants_initial_and_constant(z):
    first0, second0 = ob.eval_sle0_invariants(_state(z), z)
    assert second0 == pytest.approx(0.375 / z**2 * (1 - 4 * z / (1 - z) ** 2), rel=1e-14)
    s = lw.evolve(_state(z), np.zeros(301), 1e-3)
    first, second = ob.eval_sle0_invariants(s, z)
    assert first == pytest.approx(first0, abs=1e-6)
    assert abs(second - second0) <= 1e-6 * max(1.0, abs(second0))


def test_sheffield_neumann_initial_value():
    p = SleParams.backward(4.0)
    z = 0.5 + 1j
    s = _state(z, lw.CHORDAL, backward=True, driving=0.2)
    assert ob.eval_sheffield_neumann(s, z, p) == pytest.approx(-2 * p.a * math.log(abs(z - 0.2)), rel=1e-14)
    with pytest.raises(ValueError):
        ob.eval_sheffield_neumann(_state(z, lw.CHORDAL), z, p)


def test_greens_examples():
    assert ob.eval_greens("dirichlet_H", 1j, 2j) == pytest.approx(math.log(3))
    for z in (0.5, 0.3 + 0.6j, -0.9j):
        assert ob.eval_greens("dirichlet_D", z, 0) == pytest.approx(-math.log(abs(z)))
    with pytest.raises(ValueError):
        ob.eval_greens("neumann_H", 1j, 1j)


@pytest.mark.parametrize("kernel", list(ob.GreensKernel))
@given(data=st.data())
@settings(max_examples=30, deadline=None)
def test_greens_symmetric(kernel, data):
    r = data.draw(st.floats(0.05, 0.95))
    s = data.draw(st.floats(0.05, 0.95))
    a1, a2 = data.draw(st.floats(0, 6.2)), data.draw(st.floats(0, 6.2))
    if kernel is ob.GreensKernel.DIRICHLET_D:
        z, w = cmath.rect(r, a1), cmath.rect(s, a2)
    else:
        z, w = complex(a1 - 3, r * 3), complex(a2 - 3, s * 3)
    if abs(z - w) < 1e-6:
        return
    assert ob.eval_greens(kernel, z, w) == pytest.approx(ob.eval_greens(kernel, w, z), rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("kernel, edge", [("dirichlet_H", lambda e: 0.7 + 1j * e), ("dirichlet_D", lambda e: (1 - e) * cmath.exp(2j))])
def test_dirichlet_vanishes_at_boundary(kernel, edge):
    w = 0.2 + 0.5j if kernel == "dirichlet_D" else 1 + 2j
    vals = [ob.eval_greens(kernel, edge(e), w) for e in (1e-2, 1e-4, 1e-6)]
    assert abs(vals[-1]) < 1e-5 and abs(vals[0]) > abs(vals[1]) > abs(vals[2])


def test_restriction_initial_value_and_exponents():
    lam, mu = ob.restriction_exponents()
    assert lam == pytest.approx(5 / 8, abs=1e-15) and mu == pytest.approx(5 / 48, abs=1e-15)
    assert ob.central_charge(8 / 3) == 0
    p = SleParams.forward(8 / 3)
    assert p.h == pytest.approx(5 / 8) and p.mu == pytest.approx(5 / 48)
    hull = ob.VerticalSlit(1.0, 0.3, 8)
    assert hull.psi_prime(0.0).real == pytest.approx(1 / math.sqrt(1 + 0.09), rel=1e-15)
    s = lw.LoewnerState.new([complex(hull.x0)] + hull.points())
    assert ob.eval_restriction_chordal(s, hull, p) == pytest.approx((1 / math.sqrt(1.09)) ** (5 / 8), rel=1e-12)


@pytest.mark.parametrize("k", [1, 4, 16])
def test_zipper_of_straight_slit_is_exact(k):
    hull = ob.VerticalSlit(0.7, 0.5, k)
    x = np.array([-2.0, -0.3, 0.0, 0.4, 1.5])
    hx, hp = ob.zipper_map(np.array(hull.points()), x)
    assert np.allclose(hx, hull.psi(x).real, atol=1e-12)
    assert np.allclose(hp, hull.psi_prime(x).real, atol=1e-12)


def test_virasoro_recursion_closed_form():
    rng = np.random.default_rng(0)
    assert ob.virasoro_npoint_recursion([]) == 1
    for th in rng.uniform(0.01, 2 * math.pi - 0.01, 100):
        z = cmath.exp(1j * th)
        got = ob.virasoro_npoint_recursion([th])
        want = ob.one_point_virasoro_closed_form(z)
        assert abs(got - want) <= 1e-12 * max(1.0, abs(want))
    lam, mu = 5 / 8, 5 / 48
    z = cmath.exp(0.9j)
    assert ob.virasoro_npoint_recursion([0.9]) == pytest.approx((2 * lam * z / (1 - z) ** 2 + mu) / (2 * z * z))


def test_virasoro_recursion_two_points():
    a = ob.virasoro_npoint_recursion([0.7, -0.7])
    b = ob.virasoro_npoint_recursion([-0.7, 0.7])
    assert a == pytest.approx(b, rel=1e-12)
    with pytest.raises(ValueError):
        ob.virasoro_npoint_recursion([0.5, 0.5])
    with pytest.raises(ValueError):
        ob.virasoro_npoint_recursion([2 * math.pi])


def test_phase_continuity():
    smooth = 1j * np.linspace(0, 10, 200)
    ob.check_phase_continuity(smooth)
    jumpy = np.log(np.exp(1j * np.linspace(0, 10, 200)))
    with pytest.raises(ob.PhaseJumpError):
        ob.check_phase_continuity(jumpy)
    with_nan = 1j * np.r_[np.linspace(0, 1, 5), np.nan, np.linspace(1, 2, 5)]
    ob.check_phase_continuity(with_nan)


def test_observable_spec():
    p = SleParams.forward(2.0)
    with pytest.raises(ValueError):
        ob.ObservableSpec("nope", p)
    spec = ob.ObservableSpec("zero", p)
    assert spec(_radial_data())[0] == 0
    poisson = ob.ObservableSpec("poisson", p)
    assert poisson(_radial_data())[0] == pytest.approx(ob.poisson_ratio(_radial_data())[0])
