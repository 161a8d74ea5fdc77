"""Coulomb gas correlation differentials, conformal dimensions and Lie derivatives.

Correlations are multivalued, so every value is kept in log form: a
``LogCorrelation`` stores ``log|C|`` and an accumulated phase (each factor
uses the principal branch of ``Log``, summed in entry order).  Points at
infinity carry a conformal dimension but contribute no product factor.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .charges import (
    ChartContext,
    ChartError,
    DegenerateConfigurationError,
    Divisor,
    DoubleDivisor,
    Neutrality,
    Point,
    Side,
    Uniformization,
    check_neutrality,
    classify,
    total_charge,
)

NEUTRALITY_TOL = 1e-9


class NeutralityError(ValueError):
    """A divisor violates the neutrality condition an operation requires."""


def lambda_b(sigma: complex, b: complex) -> complex:
    """Conformal dimension ``sigma**2/2 - sigma*b`` of a vertex charge."""
    return sigma * sigma / 2 - sigma * b


@dataclass(frozen=True)
class DimEntry:
    point: Point
    lam_plus: complex
    lam_minus: complex = 0j


@dataclass(frozen=True)
class LogCorrelation:
    """``log C = log_modulus + i*phase`` together with the dimension table."""

    log_modulus: float
    phase: float
    dims: tuple[DimEntry, ...] = ()

    @property
    def log(self) -> complex:
        return complex(self.log_modulus, self.phase)

    @property
    def value(self) -> complex:
        return cmath.exp(self.log)

    @property
    def modulus(self) -> float:
        return math.exp(self.log_modulus)

    def __sub__(self, other: "LogCorrelation") -> "LogCorrelation":
        return LogCorrelation(
            self.log_modulus - other.log_modulus, self.phase - other.phase, self.dims
        )

    def to_record(self) -> dict:
        return {
            "log_modulus": self.log_modulus,
            "phase": self.phase,
            "dims": [
                {
                    "re": d.point.coord.real,
                    "im": d.point.coord.imag,
                    "at_infinity": d.point.at_infinity,
                    "lambda_plus": [d.lam_plus.real, d.lam_plus.imag],
                    "lambda_minus": [d.lam_minus.real, d.lam_minus.imag],
                }
                for d in self.dims
            ],
        }


def _from_log(total: complex, dims: Iterable[DimEntry]) -> LogCorrelation:
    return LogCorrelation(total.real, total.imag, tuple(dims))


def _clog(z: complex) -> complex:
    if z == 0:
        raise DegenerateConfigurationError("coincident marked points")
    return cmath.log(z)


# ---------------------------------------------------------------------------
# node tables


@dataclass(frozen=True)
class Nodes:
    """Flattened view of a double divisor: coordinates with both layer charges."""

    points: tuple[Point, ...]
    z: np.ndarray
    plus: np.ndarray
    minus: np.ndarray
    finite: np.ndarray
    b: complex
    chart: ChartContext

    @classmethod
    def build(cls, dd: DoubleDivisor, chart: ChartContext) -> "Nodes":
        triples = dd.nodes()
        pts = tuple(p for p, _, _ in triples)
        z = np.array([p.coord for p in pts], dtype=complex)
        plus = np.array([cp for _, cp, _ in triples], dtype=complex)
        minus = np.array([cm for _, _, cm in triples], dtype=complex)
        finite = np.array([not p.at_infinity for p in pts], dtype=bool)
        n = len(pts)
        for j in range(n):
            if not finite[j]:
                if chart.uniformization is Uniformization.DISC:
                    raise ChartError("the disc layers cannot hold a point at infinity")
                continue
            for k in range(j + 1, n):
                if finite[k] and abs(z[j] - z[k]) <= 1e-12:
                    raise DegenerateConfigurationError("coincident marked points")
        return cls(pts, z, plus, minus, finite, dd.b, chart)

    def index_of(self, point: Point) -> int:
        for i, p in enumerate(self.points):
            if p.same_as(point):
                return i
        raise KeyError(f"point {point} is not a node")

    def dims(self) -> list[DimEntry]:
        return [
            DimEntry(p, lambda_b(sp, self.b), lambda_b(sm, self.b) if sm != 0 else 0j)
            for p, sp, sm in zip(self.points, self.plus, self.minus)
        ]


def _plane_log(z: Sequence[complex], s: Sequence[complex]) -> complex:
    total = 0j
    n = len(z)
    for j in range(n):
        for k in range(j + 1, n):
            e = s[j] * s[k]
            if e != 0:
                total += e * _clog(z[j] - z[k])
    return total


def log_correlation_plane(d: Divisor) -> LogCorrelation:
    """``log prod_{j<k} (z_j - z_k)**(s_j s_k)`` over finite points."""
    finite = [(p.coord, c) for p, c in d.entries if not p.at_infinity]
    for i, (zi, _) in enumerate(finite):
        for zk, _ in finite[i + 1:]:
            if abs(zi - zk) <= 1e-12:
                raise DegenerateConfigurationError("coincident marked points")
    total = _plane_log([z for z, _ in finite], [c for _, c in finite])
    dims = [DimEntry(p, lambda_b(c, d.b)) for p, c in d.entries]
    return _from_log(total, dims)


def _double_log(nd: Nodes) -> complex:
    kind = nd.chart.uniformization
    idx = [i for i in range(len(nd.points)) if nd.finite[i]]
    z, sp, sm = nd.z, nd.plus, nd.minus
    total = 0j
    for a, j in enumerate(idx):
        for k in idx[a + 1:]:
            e = sp[j] * sp[k]
            if e != 0:
                total += e * _clog(z[j] - z[k])
            e = sm[j] * sm[k]
            if e != 0:
                total += e * _clog(z[j].conjugate() - z[k].conjugate())
    for j in idx:
        if sp[j] == 0:
            continue
        for k in idx:
            e = sp[j] * sm[k]
            if e == 0:
                continue
            if kind is Uniformization.HALF_PLANE:
                total += e * _clog(z[j] - z[k].conjugate())
            else:
                total += e * _clog(1 - z[j] * z[k].conjugate())
    return total


def _warn_neutrality(dd: DoubleDivisor) -> None:
    if abs(dd.total_charge() - 2 * dd.b) > NEUTRALITY_TOL:
        import warnings

        warnings.warn(
            "double divisor is not neutral; the charge at infinity is implicitly adjusted",
            RuntimeWarning,
            stacklevel=3,
        )


def correlation_halfplane(dd: DoubleDivisor, *, warn: bool = True) -> LogCorrelation:
    """Correlation differential in the identity chart of the upper half-plane."""
    chart = ChartContext.half_plane()
    if warn:
        _warn_neutrality(dd)
    nd = Nodes.build(dd, chart)
    return _from_log(_double_log(nd), nd.dims())


def correlation_disc(dd: DoubleDivisor, *, warn: bool = True) -> LogCorrelation:
    """Correlation differential in the identity chart of the unit disc."""
    chart = ChartContext.disc()
    if warn:
        _warn_neutrality(dd)
    nd = Nodes.build(dd, chart)
    return _from_log(_double_log(nd), nd.dims())


def correlation(d: Divisor | DoubleDivisor, chart: ChartContext, *, warn: bool = True) -> LogCorrelation:
    """Dispatch on the uniformization; plain divisors are split into layers."""
    kind = chart.uniformization
    if kind is Uniformization.SPHERE:
        if isinstance(d, DoubleDivisor):
            raise ChartError("the sphere chart takes a plain divisor")
        return log_correlation_plane(d)
    dd = d if isinstance(d, DoubleDivisor) else DoubleDivisor.from_divisor(d, chart)
    if kind is Uniformization.HALF_PLANE:
        return correlation_halfplane(dd, warn=warn)
    return correlation_disc(dd, warn=warn)


# ---------------------------------------------------------------------------
# analytic derivatives of log C


def log_gradients(nd: Nodes) -> tuple[np.ndarray, np.ndarray]:
    """Holomorphic and antiholomorphic partials of ``log C`` at every node.

    Nodes at infinity get zero entries; they never enter a Lie derivative for
    the vector fields used here (those vanish to second order at infinity).
    """
    n = len(nd.points)
    z, sp, sm = nd.z, nd.plus, nd.minus
    disc = nd.chart.uniformization is Uniformization.DISC
    d = np.zeros(n, dtype=complex)
    dbar = np.zeros(n, dtype=complex)
    for j in range(n):
        if not nd.finite[j]:
            continue
        acc = 0j
        accbar = 0j
        for k in range(n):
            if not nd.finite[k]:
                continue
            if k != j:
                if sp[j] * sp[k] != 0:
                    acc += sp[j] * sp[k] / (z[j] - z[k])
                if sm[j] * sm[k] != 0:
                    accbar += sm[j] * sm[k] / (z[j].conjugate() - z[k].conjugate())
            e = sp[j] * sm[k]
            if e != 0:
                if disc:
                    acc += e * (-z[k].conjugate()) / (1 - z[j] * z[k].conjugate())
                else:
                    acc += e / (z[j] - z[k].conjugate())
            e = sp[k] * sm[j]
            if e != 0:
                if disc:
                    accbar += e * (-z[k]) / (1 - z[k] * z[j].conjugate())
                else:
                    accbar += e / (z[j].conjugate() - z[k])
        d[j] = acc
        dbar[j] = accbar
    return d, dbar


def log_second_derivative(nd: Nodes, j: int) -> complex:
    """``d^2/dz_j^2 log C`` with all other coordinates (and conj z_j) fixed."""
    z, sp, sm = nd.z, nd.plus, nd.minus
    disc = nd.chart.uniformization is Uniformization.DISC
    acc = 0j
    for k in range(len(nd.points)):
        if not nd.finite[k]:
            continue
        if k != j and sp[j] * sp[k] != 0:
            acc -= sp[j] * sp[k] / (z[j] - z[k]) ** 2
        e = sp[j] * sm[k]
        if e != 0:
            if disc:
                acc -= e * z[k].conjugate() ** 2 / (1 - z[j] * z[k].conjugate()) ** 2
            else:
                acc -= e / (z[j] - z[k].conjugate()) ** 2
    return acc


# ---------------------------------------------------------------------------
# vector fields


class VectorField:
    """Holomorphic vector field ``v`` with derivative ``v'``."""

    #: True when v(z) = O(1/z) at infinity, so nodes at infinity are inert.
    decays_at_infinity: bool = True

    def __call__(self, z: complex) -> complex:  # pragma: no cover - interface
        raise NotImplementedError

    def derivative(self, z: complex) -> complex:  # pragma: no cover - interface
        raise NotImplementedError

    def poles(self) -> list[complex]:
        return []


class ZeroField(VectorField):
    def __call__(self, z: complex) -> complex:
        return 0j

    def derivative(self, z: complex) -> complex:
        return 0j


@dataclass
class ChordalField(VectorField):
    """``k_xi(z) = 1/(xi - z)``, the chordal Loewner field."""

    xi: complex

    def __call__(self, z: complex) -> complex:
        return 1.0 / (self.xi - z)

    def derivative(self, z: complex) -> complex:
        return 1.0 / (self.xi - z) ** 2

    def poles(self) -> list[complex]:
        return [complex(self.xi)]


@dataclass
class RadialField(VectorField):
    """``v_zeta(z) = z (zeta + z)/(zeta - z)``, the radial Loewner field."""

    zeta: complex
    decays_at_infinity = False

    def __call__(self, z: complex) -> complex:
        return z * (self.zeta + z) / (self.zeta - z)

    def derivative(self, z: complex) -> complex:
        zeta = self.zeta
        return (zeta * zeta + 2 * zeta * z - z * z) / (zeta - z) ** 2

    def poles(self) -> list[complex]:
        return [complex(self.zeta)]


@dataclass
class RationalField(VectorField):
    """``v = num/den`` with coefficient lists in increasing degree."""

    num: Sequence[complex]
    den: Sequence[complex]

    def __post_init__(self) -> None:
        self._p = np.polynomial.Polynomial(np.asarray(self.num, dtype=complex))
        self._q = np.polynomial.Polynomial(np.asarray(self.den, dtype=complex))
        self.decays_at_infinity = self._q.degree() > self._p.degree()

    def __call__(self, z: complex) -> complex:
        return complex(self._p(z) / self._q(z))

    def derivative(self, z: complex) -> complex:
        p, q = self._p, self._q
        return complex((p.deriv()(z) * q(z) - p(z) * q.deriv()(z)) / q(z) ** 2)

    def poles(self) -> list[complex]:
        return [complex(r) for r in self._q.roots()]


def lie_terms(
    v: VectorField,
    nd: Nodes,
    d: np.ndarray,
    dbar: np.ndarray,
    lam_plus: np.ndarray,
    lam_minus: np.ndarray,
    include: Iterable[int],
) -> complex:
    """``sum_j [v d_j + lam+_j v' + conj(v) dbar_j + lam-_j conj(v')]``."""
    total = 0j
    poles = v.poles()
    for j in include:
        if not nd.finite[j]:
            if not v.decays_at_infinity:
                raise ChartError("vector field does not vanish at infinity")
            continue
        zj = nd.z[j]
        for pole in poles:
            if abs(zj - pole) <= 1e-12:
                raise DegenerateConfigurationError("vector-field pole at a marked point")
        vz = v(zj)
        vp = v.derivative(zj)
        total += vz * d[j] + lam_plus[j] * vp
        if dbar[j] != 0 or lam_minus[j] != 0:
            total += vz.conjugate() * dbar[j] + lam_minus[j] * vp.conjugate()
    return total


def lie_derivative_log(
    v: VectorField,
    source: DoubleDivisor | Divisor,
    chart: ChartContext,
    at: Sequence[Point] | None = None,
) -> complex:
    """``(L_v F)/F`` for the correlation differential ``F`` of ``source``.

    ``at`` restricts the sum to the given marked points (default: all nodes).
    Derivatives are closed-form sums; no finite differences are taken.
    """
    if isinstance(source, Divisor):
        if chart.uniformization is Uniformization.SPHERE:
            source = DoubleDivisor(source)
        else:
            source = DoubleDivisor.from_divisor(source, chart)
    if chart.uniformization is Uniformization.SPHERE:
        chart_eval = ChartContext.half_plane()
        if source.minus.entries:
            raise ChartError("the sphere chart has a single layer")
    else:
        chart_eval = chart
    nd = Nodes.build(source, chart_eval)
    d, dbar = log_gradients(nd)
    lp = np.array([lambda_b(s, nd.b) for s in nd.plus])
    lm = np.array([lambda_b(s, nd.b) if s != 0 else 0j for s in nd.minus])
    include = range(len(nd.points)) if at is None else [nd.index_of(p) for p in at]
    return lie_terms(v, nd, d, dbar, lp, lm, include)


# ---------------------------------------------------------------------------
# vertex expectations


def expectation_vertex(beta: Divisor, tau: Divisor, chart: ChartContext) -> LogCorrelation:
    """``E O_beta[tau] = C[beta + tau]/C[beta]`` in log form.

    Coincident points of ``beta`` and ``tau`` merge in the numerator.  The
    dimension table holds ``lambda_b(tau_j + beta_j) - lambda_b(beta_j)``.
    """
    if not check_neutrality(beta, Neutrality.NCB, NEUTRALITY_TOL):
        raise NeutralityError(f"beta has total charge {total_charge(beta)}, expected 2b")
    if not check_neutrality(tau, Neutrality.NC0, NEUTRALITY_TOL):
        raise NeutralityError(f"tau has total charge {total_charge(tau)}, expected 0")
    tau_b = tau.with_b(beta.b)
    num = correlation(beta + tau_b, chart, warn=False)
    den = correlation(beta, chart, warn=False)
    if chart.uniformization is Uniformization.SPHERE:
        den_dd = DoubleDivisor(beta)
        tau_dd = DoubleDivisor(tau_b)
    else:
        den_dd = DoubleDivisor.from_divisor(beta, chart)
        tau_dd = DoubleDivisor.from_divisor(tau_b, chart)
    den_nodes = den_dd.nodes()
    dims = []
    for p, tp, tm in tau_dd.nodes():
        bp = bm = 0j
        for q, cp, cm in den_nodes:
            if q.same_as(p):
                bp, bm = cp, cm
                break
        b = beta.b
        dims.append(
            DimEntry(
                p,
                lambda_b(tp + bp, b) - lambda_b(bp, b),
                lambda_b(tm + bm, b) - lambda_b(bm, b),
            )
        )
    return LogCorrelation(num.log_modulus - den.log_modulus, num.phase - den.phase, tuple(dims))


# ---------------------------------------------------------------------------
# Moebius transport


def _normalize_sl2(coeffs: Sequence[complex]) -> np.ndarray:
    m = np.array([[coeffs[0], coeffs[1]], [coeffs[2], coeffs[3]]], dtype=complex)
    det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    if abs(det) < 1e-300:
        raise ValueError("degenerate Moebius map (ad - bc = 0)")
    m = m / cmath.sqrt(det)
    if (m[0, 0] + m[1, 1]).real < 0:
        m = -m
    return m


def _sl2_log(m: np.ndarray) -> np.ndarray:
    """Trace-free logarithm of an SL(2,C) matrix with non-negative real trace part."""
    tr = m[0, 0] + m[1, 1]
    n = m - tr / 2 * np.eye(2)
    # eigenvalues mu, 1/mu with mu + 1/mu = tr; X = log(mu) * N / delta
    disc = cmath.sqrt(tr * tr / 4 - 1)
    mu = tr / 2 + disc
    if abs(disc) < 1e-14:
        # parabolic: m = I + N with N nilpotent, log m = N
        return n
    return cmath.log(mu) * n / disc


def _sl2_exp_path(x: np.ndarray, s: np.ndarray) -> np.ndarray:
    """``exp(s X)`` for trace-free X, vectorized over the path parameter."""
    delta2 = -(x[0, 0] * x[1, 1] - x[0, 1] * x[1, 0])
    delta = cmath.sqrt(delta2)
    if abs(delta) < 1e-14:
        c = np.ones_like(s, dtype=complex)
        sh = s.astype(complex)
    else:
        c = np.cosh(s * delta)
        sh = np.sinh(s * delta) / delta
    out = np.empty((len(s), 2, 2), dtype=complex)
    out[:, 0, 0] = c + sh * x[0, 0]
    out[:, 0, 1] = sh * x[0, 1]
    out[:, 1, 0] = sh * x[1, 0]
    out[:, 1, 1] = c + sh * x[1, 1]
    return out


def _continuous_log(values: np.ndarray) -> np.ndarray:
    """Log along the first axis, continuous in the argument, starting principal."""
    mod = np.log(np.abs(values))
    ang = np.unwrap(np.angle(values), axis=0)
    return mod + 1j * ang


def moebius_transport(
    d: Divisor,
    tau: Sequence[complex],
    *,
    branch: str = "continuous",
    max_refine: int = 14,
) -> LogCorrelation:
    """``C(tau z) * prod tau'(z_j)**lambda_j`` as a log.

    With ``branch="continuous"`` every factor is followed along the
    one-parameter path ``exp(s log M)`` from the identity to ``tau``, so the
    result agrees with :func:`log_correlation_plane` exactly rather than up
    to a charge-dependent branch jump.  ``branch="principal"`` evaluates each
    factor with the principal logarithm at the endpoint only.
    """
    if not check_neutrality(d, Neutrality.NCB, NEUTRALITY_TOL):
        raise NeutralityError("Moebius invariance needs a divisor with total charge 2b")
    finite = [(p.coord, c) for p, c in d.entries if not p.at_infinity]
    if len(finite) != len(d.entries):
        raise ChartError("points at infinity need chart bookkeeping; pass finite points")
    z = np.array([p for p, _ in finite], dtype=complex)
    s_ch = np.array([c for _, c in finite], dtype=complex)
    lam = np.array([lambda_b(c, d.b) for c in s_ch])
    m = _normalize_sl2(tau)
    a, b_, c, dd = m[0, 0], m[0, 1], m[1, 0], m[1, 1]
    den = c * z + dd
    if np.any(np.abs(den) < 1e-300):
        raise ChartError("tau sends a marked point to infinity")
    n = len(z)
    pairs = [(j, k) for j in range(n) for k in range(j + 1, n) if s_ch[j] * s_ch[k] != 0]
    dims = tuple(DimEntry(p, lambda_b(q, d.b)) for p, q in d.entries)
    if branch == "principal":
        w = (a * z + b_) / den
        deriv = 1.0 / den**2
        total = 0j
        for j, k in pairs:
            total += s_ch[j] * s_ch[k] * _clog(w[j] - w[k])
        for j in range(n):
            if lam[j] != 0:
                total += lam[j] * cmath.log(deriv[j])
        return _from_log(total, dims)
    if branch != "continuous":
        raise ValueError("branch must be 'continuous' or 'principal'")
    x = _sl2_log(m)
    steps = 32
    for _ in range(max_refine):
        s = np.linspace(0.0, 1.0, steps + 1)
        ms = _sl2_exp_path(x, s)
        den_s = ms[:, 1, 0][:, None] * z[None, :] + ms[:, 1, 1][:, None]
        w = (ms[:, 0, 0][:, None] * z[None, :] + ms[:, 0, 1][:, None]) / den_s
        cols = [w[:, j] - w[:, k] for j, k in pairs]
        cols += [1.0 / den_s[:, j] ** 2 for j in range(n)]
        vals = np.stack(cols, axis=1) if cols else np.ones((len(s), 0), dtype=complex)
        jumps = np.abs(np.diff(np.angle(vals), axis=0))
        jumps = np.minimum(jumps, 2 * np.pi - jumps)
        if vals.shape[1] == 0 or float(np.max(jumps)) < 0.25:
            break
        steps *= 2
    else:
        raise ChartError("Moebius path passes too close to a pole at a marked point")
    logs = _continuous_log(vals)[-1]
    total = 0j
    for i, (j, k) in enumerate(pairs):
        total += s_ch[j] * s_ch[k] * logs[i]
    for j in range(n):
        total += lam[j] * logs[len(pairs) + j]
    return _from_log(complex(total), dims)


def moebius_apply(tau: Sequence[complex], z: complex) -> complex:
    a, b, c, d = tau
    return (a * z + b) / (c * z + d)


def moebius_derivative(tau: Sequence[complex], z: complex) -> complex:
    a, b, c, d = tau
    return (a * d - b * c) / (c * z + d) ** 2


CAYLEY: tuple[complex, complex, complex, complex] = (1, -1j, 1, 1j)
"""Coefficients of ``z -> (z - i)/(z + i)``, mapping the half-plane onto the disc."""


def transport_double(
    dd: DoubleDivisor, tau: Sequence[complex], target: ChartContext
) -> tuple[DoubleDivisor, complex]:
    """Move a double divisor by a Moebius map; also return the log Jacobian.

    The Jacobian is ``sum_j lam+_j Log tau'(z_j) + lam-_j conj(Log tau'(z_j))``,
    so that ``log C_source = log C_target(moved) + jacobian`` modulo branches.
    """
    b = dd.b

    def move(div: Divisor) -> Divisor:
        out = []
        for p, c in div.entries:
            if p.at_infinity:
                raise ChartError("transport of points at infinity is not supported")
            w = moebius_apply(tau, p.coord)
            side = classify(w, False, target)
            if p.side is Side.BOUNDARY:
                side = Side.BOUNDARY
            out.append((Point(w, False, side), c))
        return Divisor(tuple(out), b)

    jac = 0j
    for p, sp, sm in dd.nodes():
        lg = cmath.log(moebius_derivative(tau, p.coord))
        jac += lambda_b(sp, b) * lg
        if sm != 0:
            jac += lambda_b(sm, b) * lg.conjugate()
    return DoubleDivisor(move(dd.plus), move(dd.minus)), jac

