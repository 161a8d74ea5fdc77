import cmath
import math

import numpy as np
import pytest
from hypothesis import given, reject, settings
from hypothesis import strategies as st

from slelab.charges import (
    DISC,
    HALF_PLANE,
    SPHERE,
    ChartError,
    DegenerateConfigurationError,
    Divisor,
    DoubleDivisor,
    Point,
    divisor,
)
from slelab.coulomb import (
    ChordalField,
    NeutralityError,
    RadialField,
    RationalField,
    ZeroField,
    correlation,
    correlation_disc,
    correlation_halfplane,
    expectation_vertex,
    lambda_b,
    lie_derivative_log,
    log_correlation_plane,
    moebius_transport,
)
from slelab.partition import SleParams

cplx = st.builds(complex, st.floats(-2, 2), st.floats(-2, 2))


@given(sigma=cplx, b=cplx)
def test_lambda_reflection(sigma, b):
    assert lambda_b(sigma, b) == pytest.approx(lambda_b(2 * b - sigma, b), abs=1e-12)


@pytest.mark.parametrize(
    "kappa, expected",
    [(6.0, 0.0), (8 / 3, 5 / 8)],
)
def test_one_leg_dimension(kappa, expected):
    p = SleParams.forward(kappa)
    assert lambda_b(p.a, p.b) == pytest.approx(expected, abs=1e-14)


def test_lambda_vanishes_at_two_b():
    assert lambda_b(2 * 0.37, 0.37) == 0


def test_single_background_charge_is_trivial():
    lc = log_correlation_plane(divisor([(1 + 2j, 2 * 0.3)], 0.3, SPHERE))
    assert lc.log == 0 and lc.value == 1


@pytest.mark.parametrize("sigma, b", [(0.7, 0.2), (1.3 + 0.4j, -0.5), (-0.4, 0.9j)])
def test_two_point_function(sigma, b):
    z1, z2 = 0.3 + 1.1j, -0.8 + 0.2j
    lc = log_correlation_plane(divisor([(z1, sigma), (z2, 2 * b - sigma)], b, SPHERE))
    lam = lambda_b(sigma, b)
    assert lc.value == pytest.approx(cmath.exp(-2 * lam * cmath.log(z1 - z2)), rel=1e-12)


def test_vandermonde():
    lc = log_correlation_plane(divisor([(0, 1), (1, 1), (2, 1)], 0.4, SPHERE))
    assert lc.value == pytest.approx(-2, abs=1e-12)
    assert lc.modulus == pytest.approx(2, rel=1e-14)


def test_coincident_points_rejected():
    with pytest.raises(DegenerateConfigurationError):
        Divisor(((Point(1j), 1.0), (Point(1j + 1e-13), -1.0)), 0.0)
    d = Divisor(((Point(1j), 1.0), (Point(1j + 1e-11), -1.0)), 0.0)
    assert log_correlation_plane(d).log_modulus == pytest.approx(-math.log(1e-11), rel=1e-3)


def test_halfplane_single_layer_is_plane_product():
    d = divisor([(1j, 0.5), (2 + 1j, -0.3), (0.5, 0.2)], 0.2)
    dd = DoubleDivisor(d)
    assert correlation_halfplane(dd, warn=False).log == pytest.approx(log_correlation_plane(d).log, abs=1e-14)


@pytest.mark.parametrize("y, sigma", [(0.5, 0.7), (2.0, 1.0 + 0.5j), (1.0, -0.3j)])
def test_halfplane_conjugate_layer_modulus(y, sigma):
    z = 1j * y + 0.4
    dd = DoubleDivisor(divisor([(z, sigma)], 0.0), divisor([(z, sigma.conjugate())], 0.0))
    lc = correlation_halfplane(dd, warn=False)
    assert lc.log_modulus == pytest.approx(abs(sigma) ** 2 * math.log(2 * y), rel=1e-13)


def test_empty_correlations():
    assert correlation_halfplane(DoubleDivisor(Divisor())).value == 1
    zero = divisor([(0.3j, 0.0), (0.5, 0.0)], 0.0, DISC)
    assert correlation_disc(DoubleDivisor(zero, zero), warn=False).value == 1


@pytest.mark.parametrize("z, sigma", [(0.3 + 0.4j, 0.8), (-0.6j, 1.5), (0.1, 0.25)])
def test_disc_conformal_radius(z, sigma):
    dd = DoubleDivisor(divisor([(z, sigma)], 0.0, DISC), divisor([(z, -sigma)], 0.0, DISC))
    lc = correlation_disc(dd, warn=False)
    assert lc.log_modulus == pytest.approx(-sigma**2 * math.log(1 - abs(z) ** 2), rel=1e-12)


def test_disc_conjugation_symmetric_phase():
    plus = divisor([(0.3 + 0.4j, 0.6), (0.3 - 0.4j, 0.6), (0.5, -0.2)], 0.0, DISC)
    lc = correlation_disc(DoubleDivisor(plus, plus), warn=False)
    assert math.remainder(lc.phase, math.pi) == pytest.approx(0.0, abs=1e-12)


def test_moebius_scaling_example():
    b = 0.3
    d = divisor([(0, 1.0), (1, 2 * b - 1.0)], b, SPHERE)
    moved = moebius_transport(d, (2, 0, 0, 1))
    assert moved.log_modulus == pytest.approx(log_correlation_plane(d).log_modulus, abs=1e-12)


@pytest.mark.parametrize("tau", [(1, 0, 0, 1), (1, 1, 0, 1)], ids=["identity", "translation"])
def test_moebius_trivial_maps(tau):
    d = divisor([(0.5j, 0.4), (1 + 1j, -0.7), (2, 0.3 + 0.6j)], 0.0, SPHERE)
    d = d + divisor([(-1 - 1j, 2 * d.b - sum(d.charges))], d.b, SPHERE)
    assert moebius_transport(d, tau).log == pytest.approx(log_correlation_plane(d).log, abs=1e-12)


def test_moebius_needs_neutrality():
    with pytest.raises(NeutralityError):
        moebius_transport(divisor([(1j, 1.0)], 0.0, SPHERE), (2, 0, 0, 1))


@given(
    zs=st.lists(cplx, min_size=2, max_size=5, unique_by=lambda z: (round(z.real, 2), round(z.imag, 2))),
    cs=st.lists(cplx, min_size=5, max_size=5),
    b=cplx,
    m=st.tuples(cplx, cplx, cplx, cplx),
)
@settings(max_examples=80, deadline=None)
def test_moebius_invariance(zs, cs, b, m):
    a_, b_, c_, d_ = m
    if abs(a_ * d_ - b_ * c_) < 0.1:
        return
    cs = cs[: len(zs) - 1]
    cs.append(2 * b - sum(cs))
    d = divisor(list(zip(zs, cs)), b, SPHERE)
    if any(abs(c_ * z + d_) < 0.05 for z in zs):
        return
    try:
        lhs = moebius_transport(d, m)
    except ChartError:
        reject()  # the continuation path meets a pole; documented refusal
    rhs = log_correlation_plane(d)
    assert abs(lhs.log_modulus - rhs.log_modulus) < 1e-9
    k = (lhs.phase - rhs.phase) / (2 * math.pi)
    assert abs(k - round(k)) < 1e-9


def test_expectation_vertex_empty_tau():
    beta = divisor([(0.0, 0.6), (0.5j, 0.2), (-0.5j, 0.2)], 0.5, DISC)
    assert expectation_vertex(beta, Divisor((), 0.5), DISC).value == 1


def test_expectation_vertex_target_dimension():
    b, sigma = 0.35, 0.8
    q, qs = Point(0j), Point.infinity(Point().side.REFLECTED)
    beta = Divisor(((q, b), (qs, b)), b)
    z = Point.at(0.3 + 0.2j, DISC)
    tau = Divisor(((z, sigma), (q, -sigma / 2), (qs, -sigma / 2)), b)
    lc = expectation_vertex(beta, tau, DISC)
    dims = {(e.point.at_infinity, e.point.coord): e for e in lc.dims}
    at_q = dims[(False, 0j)]
    expected = lambda_b(b - sigma / 2, b) - lambda_b(b, b)
    assert at_q.lam_plus == pytest.approx(expected, abs=1e-14)
    assert at_q.lam_plus == pytest.approx((sigma / 2) ** 2 / 2, abs=1e-14)


@pytest.mark.parametrize("kappa", [2.0, 8 / 3, 4.0, 6.0])
def test_one_leg_effective_target_dimension(kappa):
    p = SleParams.forward(kappa)
    assert p.mu == pytest.approx((kappa - 2) * (6 - kappa) / (8 * kappa), abs=1e-12)


def test_lie_derivative_zero_field():
    d = divisor([(1j, 0.5), (2.0, -0.5)], 0.0)
    assert lie_derivative_log(ZeroField(), d, HALF_PLANE) == 0


def test_lie_derivative_single_point():
    xi, z0, lam_sigma, b = 0.3, 1.2 + 0.7j, 0.9, 0.1
    d = divisor([(z0, lam_sigma)], b, SPHERE)
    lam = lambda_b(lam_sigma, b)
    got = lie_derivative_log(ChordalField(xi), d, SPHERE)
    assert got == pytest.approx(lam / (xi - z0) ** 2, abs=1e-14)


def _flowed(source: DoubleDivisor, v, s: float) -> DoubleDivisor:
    def move(d: Divisor) -> Divisor:
        return Divisor(tuple((Point(p.coord + s * v(p.coord), False, p.side), c) for p, c in d.entries), d.b)

    return DoubleDivisor(move(source.plus), move(source.minus))


def _fd_lie(source: DoubleDivisor, chart, v, s: float = 1e-6) -> complex:
    def total(sign: float) -> complex:
        moved = _flowed(source, v, sign * s)
        val = correlation(moved, chart, warn=False).log
        for p, lp, lm in source.nodes():
            dv = v.derivative(p.coord)
            jac = cmath.log(1 + sign * s * dv)
            val += (lp * lp / 2 - lp * source.b) * jac
            if lm != 0:
                val += (lm * lm / 2 - lm * source.b) * jac.conjugate()
        return val

    return (total(1) - total(-1)) / (2 * s)


@pytest.mark.parametrize(
    "chart, field, pts",
    [
        (HALF_PLANE, ChordalField(0.2), [(0.5 + 1j, 0.6, 0.6), (-1 + 0.5j, -0.3 + 0.2j, -0.3 - 0.2j), (1.5, 0.4, 0)]),
        (DISC, RadialField(1.0), [(0.3 + 0.4j, 0.6, 0.6), (-0.2 - 0.5j, 0.7, -0.1), (cmath.exp(2j), 0.5, 0)]),
        (HALF_PLANE, RationalField([1, 0.5], [2, 0, 1]), [(0.5 + 1j, 0.6, -0.2), (-1 + 2j, 0.3, 0.3)]),
    ],
    ids=["chordal", "radial", "rational"],
)
def test_lie_derivative_matches_finite_differences(chart, field, pts):
    b = 0.15
    plus = Divisor(tuple((Point.at(z, chart), sp) for z, sp, _ in pts), b)
    minus = Divisor(tuple((Point.at(z, chart), sm) for z, _, sm in pts if sm != 0), b)
    source = DoubleDivisor(plus, minus)
    exact = lie_derivative_log(field, source, chart)
    fd = _fd_lie(source, chart, field)
    assert abs(exact - fd) <= 1e-6 * max(1.0, abs(exact))
