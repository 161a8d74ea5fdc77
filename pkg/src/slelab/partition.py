"""Partition functions, SLE drifts, and null-vector / BPZ-Cardy residuals.

The partition function of a symmetric background charge ``beta`` is
``Z = |C_(b)[beta]|``.  Backward flows use ``|C_(-ib)[-i beta]|``; every
routine here handles that case by running the forward formulas on the
substituted charges, since the underlying identities are algebraic in
``(a, b)``.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .charges import (
    ChartContext,
    Divisor,
    DoubleDivisor,
    Neutrality,
    Point,
    Side,
    Uniformization,
    check_neutrality,
    symmetrize_check,
    total_charge,
)
from .coulomb import (
    NEUTRALITY_TOL,
    ChordalField,
    Nodes,
    NeutralityError,
    RadialField,
    VectorField,
    correlation,
    lambda_b,
    lie_terms,
    log_gradients,
    log_second_derivative,
)


class Mode(str, Enum):
    FORWARD = "forward"
    BACKWARD = "backward"


class Geometry(str, Enum):
    CHORDAL = "chordal"
    RADIAL = "radial"


class SymmetryError(ValueError):
    """The background charge is not symmetric under the involution."""


@dataclass(frozen=True)
class SleParams:
    """SLE parameter set: ``kappa`` with the charges ``a`` and ``b``.

    Forward flows have ``b = a(kappa/4 - 1)`` so that ``2a(a+b) = 1``;
    backward flows have ``b = -a(kappa/4 + 1)`` so that ``2a(a+b) = -1``.
    """

    kappa: float
    a: float
    b: float
    mode: Mode = Mode.FORWARD

    @classmethod
    def forward(cls, kappa: float, sign: int = 1) -> "SleParams":
        if kappa <= 0:
            raise ValueError("kappa must be positive")
        a = sign * math.sqrt(2.0 / kappa)
        return cls(kappa, a, a * (kappa / 4 - 1), Mode.FORWARD)

    @classmethod
    def backward(cls, kappa: float, sign: int = 1) -> "SleParams":
        if kappa <= 0:
            raise ValueError("kappa must be positive")
        a = sign * math.sqrt(2.0 / kappa)
        return cls(kappa, a, -a * (kappa / 4 + 1), Mode.BACKWARD)

    def is_consistent(self, tol: float = 1e-12) -> bool:
        target = 1.0 if self.mode is Mode.FORWARD else -1.0
        return abs(2 * self.a * (self.a + self.b) - target) <= tol

    def perturbed(self, db: float) -> "SleParams":
        """Copy with ``b`` shifted (used for negative controls)."""
        return replace(self, b=self.b + db)

    @property
    def central_charge(self) -> float:
        return 1 - 12 * self.b**2 if self.mode is Mode.FORWARD else 1 + 12 * self.b**2

    @property
    def h(self) -> float:
        """Dimension ``a^2/2 - ab`` of the one-leg charge at the seed."""
        return self.a**2 / 2 - self.a * self.b

    @property
    def mu(self) -> float:
        """Effective dimension ``a^2/4 - b^2`` at the target of a radial flow."""
        return self.a**2 / 4 - self.b**2

    @property
    def effective(self) -> tuple[complex, complex]:
        """Charges ``(a, b)`` after the backward substitution (identity if forward)."""
        if self.mode is Mode.FORWARD:
            return complex(self.a), complex(self.b)
        return -1j * self.a, -1j * self.b


def _effective_divisor(beta: Divisor, params: SleParams) -> Divisor:
    if params.mode is Mode.FORWARD:
        return beta.with_b(params.b)
    return beta.scaled(-1j, b=-1j * params.b)


def chart_for(geometry: Geometry | str) -> ChartContext:
    return ChartContext.half_plane() if Geometry(geometry) is Geometry.CHORDAL else ChartContext.disc()


def seed_point(x: float, geometry: Geometry | str) -> Point:
    """Boundary point ``xi`` (chordal) or ``e^{i theta}`` (radial)."""
    if Geometry(geometry) is Geometry.CHORDAL:
        return Point(complex(x, 0.0), False, Side.BOUNDARY)
    return Point(cmath.exp(1j * x), False, Side.BOUNDARY)


def with_seed(background: Divisor, x: float, params: SleParams, geometry: Geometry | str) -> Divisor:
    """``beta_xi = background + a * xi`` in the chosen geometry."""
    seed = Divisor(((seed_point(x, geometry), complex(params.a)),), background.b)
    return background + seed


def _check_background(beta: Divisor, chart: ChartContext, *, require_symmetric: bool = True) -> None:
    if not check_neutrality(beta, Neutrality.NCB, NEUTRALITY_TOL):
        raise NeutralityError(f"total charge {total_charge(beta)} differs from 2b = {2 * beta.b}")
    if require_symmetric and not symmetrize_check(beta, chart, 1e-12):
        raise SymmetryError("background charge is not symmetric")


def z_beta(beta: Divisor, chart: ChartContext, params: SleParams) -> float:
    """Partition function ``|C_(b)[beta]|`` (or the backward variant)."""
    beta = beta.with_b(params.b)
    _check_background(beta, chart)
    eff = _effective_divisor(beta, params)
    return math.exp(correlation(eff, chart, warn=False).log_modulus)


def log_z_beta(beta: Divisor, chart: ChartContext, params: SleParams) -> float:
    beta = beta.with_b(params.b)
    _check_background(beta, chart)
    return correlation(_effective_divisor(beta, params), chart, warn=False).log_modulus


@dataclass
class _SeedJet:
    """Nodes of the effective divisor plus derivatives at the seed."""

    nodes: Nodes
    seed: int
    d: np.ndarray
    dbar: np.ndarray
    d1: complex
    d2: complex


def _seed_jet(full: Divisor, seed: Point, chart: ChartContext) -> _SeedJet:
    dd = DoubleDivisor.from_divisor(full, chart)
    nd = Nodes.build(dd, chart)
    j = nd.index_of(seed)
    d, dbar = log_gradients(nd)
    return _SeedJet(nd, j, d, dbar, complex(d[j]), log_second_derivative(nd, j))


def drift_chordal(background: Divisor, xi: float, params: SleParams) -> float:
    """``kappa * d/dxi log Z`` for ``beta_xi = background + a*xi`` in the half-plane."""
    beta = with_seed(background.with_b(params.b), xi, params, Geometry.CHORDAL)
    chart = ChartContext.half_plane()
    _check_background(beta, chart)
    eff = _effective_divisor(beta, params)
    jet = _seed_jet(eff, seed_point(xi, Geometry.CHORDAL), chart)
    return params.kappa * jet.d1.real


def drift_radial(background: Divisor, theta: float, params: SleParams) -> float:
    """``kappa * d/dtheta log Z`` for ``beta = background + a*e^{i theta}`` in the disc."""
    beta = with_seed(background.with_b(params.b), theta, params, Geometry.RADIAL)
    chart = ChartContext.disc()
    _check_background(beta, chart)
    eff = _effective_divisor(beta, params)
    zeta = cmath.exp(1j * theta)
    jet = _seed_jet(eff, seed_point(theta, Geometry.RADIAL), chart)
    return params.kappa * (1j * zeta * jet.d1).real


def theta_log_derivative(background: Divisor, theta: float, params: SleParams) -> complex:
    """``d/dtheta log C`` (complex) for the radial seeded background.

    For a symmetric neutral background its imaginary part equals ``-h``;
    this is the normalization identity that links ``|C|`` with ``C``.
    """
    beta = with_seed(background.with_b(params.b), theta, params, Geometry.RADIAL)
    chart = ChartContext.disc()
    eff = _effective_divisor(beta, params)
    zeta = cmath.exp(1j * theta)
    jet = _seed_jet(eff, seed_point(theta, Geometry.RADIAL), chart)
    return 1j * zeta * jet.d1


def _field(x: float, geometry: Geometry) -> VectorField:
    if geometry is Geometry.CHORDAL:
        return ChordalField(complex(x, 0.0))
    return RadialField(cmath.exp(1j * x))


def _theta_derivs(d1: complex, d2: complex, zeta: complex) -> tuple[complex, complex]:
    return 1j * zeta * d1, -zeta * d1 - zeta * zeta * d2


def _modulus_lie(jet: _SeedJet, v: VectorField, b: complex) -> complex:
    """``(L_v Z)/Z`` for ``Z = |C|`` over all nodes except the seed."""
    nd = jet.nodes
    dz = 0.5 * (jet.d + np.conj(jet.dbar))
    lp = np.array([lambda_b(s, b) for s in nd.plus])
    lm = np.array([lambda_b(s, b) if s != 0 else 0j for s in nd.minus])
    mu = 0.5 * (lp + np.conj(lm))
    include = [i for i in range(len(nd.points)) if i != jet.seed]
    return lie_terms(v, nd, dz, np.conj(dz), mu, np.conj(mu), include)


def _plain_lie(jet: _SeedJet, v: VectorField, b: complex) -> complex:
    nd = jet.nodes
    lp = np.array([lambda_b(s, b) for s in nd.plus])
    lm = np.array([lambda_b(s, b) if s != 0 else 0j for s in nd.minus])
    include = [i for i in range(len(nd.points)) if i != jet.seed]
    return lie_terms(v, nd, jet.d, jet.dbar, lp, lm, include)


def null_vector_terms(
    background: Divisor, x: float, params: SleParams, geometry: Geometry | str
) -> tuple[complex, complex]:
    """Both sides of the null-vector equation, each divided by the partition value.

    Chordal: ``(1/2a^2) d_xi^2 Z / Z`` and ``(L_k Z)/Z``.
    Radial: ``L(zeta) C / C`` and ``(L_v C)/C`` with
    ``L(e^{i theta}) = -(2/a^2)(d_theta^2/2 + i h d_theta) + h``.
    In backward mode ``a`` and ``b`` are the substituted charges.
    """
    geometry = Geometry(geometry)
    chart = chart_for(geometry)
    a_eff, b_eff = params.effective
    beta = with_seed(background.with_b(params.b), x, params, geometry)
    _check_background(beta, chart, require_symmetric=False)
    eff = _effective_divisor(beta, params)
    seed = seed_point(x, geometry)
    jet = _seed_jet(eff, seed, chart)
    v = _field(x, geometry)
    if geometry is Geometry.CHORDAL:
        l1 = jet.d1.real
        l2 = jet.d2.real
        lhs = (l1 * l1 + l2) / (2 * a_eff * a_eff)
        rhs = _modulus_lie(jet, v, b_eff)
        return complex(lhs), rhs
    zeta = seed.coord
    t1, t2 = _theta_derivs(jet.d1, jet.d2, zeta)
    h = lambda_b(a_eff, b_eff)
    lhs = -(2 / (a_eff * a_eff)) * (0.5 * (t1 * t1 + t2) + 1j * h * t1) + h
    rhs = _plain_lie(jet, v, b_eff)
    return lhs, rhs


def null_vector_residual(
    background: Divisor, x: float, params: SleParams, geometry: Geometry | str = Geometry.CHORDAL
) -> float:
    """``|lhs - rhs|`` of the null-vector equation relative to the partition value."""
    lhs, rhs = null_vector_terms(background, x, params, geometry)
    return abs(lhs - rhs)


def _ratio_jet(
    full: Divisor, tau_eff: Divisor, seed: Point, chart: ChartContext
) -> tuple[_SeedJet, _SeedJet, np.ndarray, np.ndarray, np.ndarray, np.ndarray, list[int]]:
    """Jets of numerator ``C[beta+tau]`` and denominator ``C[beta]`` on shared nodes."""
    num = _seed_jet(full + tau_eff, seed, chart)
    den = _seed_jet(full, seed, chart)
    nn = num.nodes
    n = len(nn.points)
    b = nn.b
    d = num.d.copy()
    dbar = num.dbar.copy()
    lp = np.array([lambda_b(s, b) for s in nn.plus])
    lm = np.array([lambda_b(s, b) if s != 0 else 0j for s in nn.minus])
    for i, p in enumerate(den.nodes.points):
        k = nn.index_of(p)
        d[k] -= den.d[i]
        dbar[k] -= den.dbar[i]
        lp[k] -= lambda_b(den.nodes.plus[i], b)
        lm[k] -= lambda_b(den.nodes.minus[i], b) if den.nodes.minus[i] != 0 else 0j
    include = [i for i in range(n) if i != num.seed]
    return num, den, d, dbar, lp, lm, include


def bpz_cardy_terms(
    background: Divisor,
    tau: Divisor,
    x: float,
    params: SleParams,
    geometry: Geometry | str = Geometry.CHORDAL,
    operator_params: SleParams | None = None,
) -> tuple[complex, complex]:
    """Both sides of the BPZ-Cardy equation for ``R = C[beta+tau]/C[beta]``, divided by ``R``.

    ``operator_params`` (default ``params``) supplies the coefficients of the
    differential operator; passing a different parameter set gives the
    wrong-kappa negative control while the observable keeps its charges.
    """
    geometry = Geometry(geometry)
    chart = chart_for(geometry)
    op = operator_params or params
    a_op, b_op = op.effective
    beta = with_seed(background.with_b(params.b), x, params, geometry)
    _check_background(beta, chart, require_symmetric=False)
    if not check_neutrality(tau, Neutrality.NC0, NEUTRALITY_TOL):
        raise NeutralityError("tau must have total charge 0")
    eff = _effective_divisor(beta, params)
    tau_eff = _effective_divisor(tau.with_b(params.b), params)
    seed = seed_point(x, geometry)
    num, den, d, dbar, lp, lm, include = _ratio_jet(eff, tau_eff, seed, chart)
    r1 = num.d1 - den.d1
    r2 = num.d2 - den.d2
    v = _field(x, geometry)
    rhs = lie_terms(v, num.nodes, d, dbar, lp, lm, include)
    if geometry is Geometry.CHORDAL:
        z1 = den.d1.real
        lhs = (r1 * r1 + r2 + 2 * z1 * r1) / (2 * a_op * a_op)
        return lhs, rhs
    zeta = seed.coord
    t1, t2 = _theta_derivs(r1, r2, zeta)
    z1 = (1j * zeta * den.d1).real
    lhs = -(2 / (a_op * a_op)) * (0.5 * (t1 * t1 + t2) + z1 * t1)
    return lhs, rhs


def bpz_cardy_residual(
    background: Divisor,
    tau: Divisor,
    x: float,
    params: SleParams,
    geometry: Geometry | str = Geometry.CHORDAL,
    operator_params: SleParams | None = None,
) -> float:
    """``|lhs - rhs|`` of the BPZ-Cardy equation relative to ``R``."""
    lhs, rhs = bpz_cardy_terms(background, tau, x, params, geometry, operator_params)
    return abs(lhs - rhs)


# ---------------------------------------------------------------------------
# standard background charges


def standard_chordal_background(params: SleParams) -> Divisor:
    """``(2b - a) * infinity``: together with ``a * xi`` this gives Z = 1."""
    return Divisor(((Point.infinity(), complex(2 * params.b - params.a)),), params.b)


def standard_radial_background(params: SleParams) -> Divisor:
    """``(b - a/2)(0 + 0*)`` in the disc."""
    c = complex(params.b - params.a / 2)
    return Divisor(
        ((Point(0j, False, Side.INTERIOR), c), (Point.infinity(Side.REFLECTED), c)),
        params.b,
    )


def _rho_sign(params: SleParams) -> float:
    return 1.0 if params.mode is Mode.FORWARD else -1.0


def rho_background_chordal(
    params: SleParams, force_points: list[float], rho: list[float]
) -> Divisor:
    """Background for chordal SLE(kappa, rho): ``beta_k = rho_k/(a kappa)`` at each force point.

    With ``a = sqrt(2/kappa)`` this is ``rho_k/sqrt(2 kappa)``; the balancing
    charge sits at infinity.  Backward flows use ``beta_k = -rho_k/(a kappa)``
    so that the drift keeps the form ``sum_k rho_k/(xi - q_k)``.
    """
    if len(force_points) != len(rho):
        raise ValueError("one rho per force point")
    s = _rho_sign(params)
    entries = []
    for q, r in zip(force_points, rho):
        entries.append((Point(complex(q, 0.0), False, Side.BOUNDARY), complex(s * r / (params.a * params.kappa))))
    rest = 2 * params.b - params.a - sum(c for _, c in entries)
    entries.append((Point.infinity(), complex(rest)))
    return Divisor(tuple(entries), params.b)


def rho_background_radial(
    params: SleParams, force_angles: list[float], rho: list[float], eta: float = 0.0
) -> Divisor:
    """Background for radial SLE_eta(kappa, rho).

    Force points ``e^{i theta_k}`` carry ``rho_k/(a kappa)``; the target 0 and
    its mirror carry ``b - (a + beta + i delta)/2`` and its conjugate, where
    ``beta`` is the total force charge and ``delta = eta a``.  Backward flows
    flip the sign of both ``beta_k`` and ``delta``.
    """
    if len(force_angles) != len(rho):
        raise ValueError("one rho per force point")
    s = _rho_sign(params)
    entries = []
    for th, r in zip(force_angles, rho):
        entries.append((Point(cmath.exp(1j * th), False, Side.BOUNDARY), complex(s * r / (params.a * params.kappa))))
    beta_tot = sum(c for _, c in entries)
    delta = s * eta * params.a
    cq = params.b - (params.a + beta_tot + 1j * delta) / 2
    entries.append((Point(0j, False, Side.INTERIOR), complex(cq)))
    entries.append((Point.infinity(Side.REFLECTED), complex(cq).conjugate()))
    return Divisor(tuple(entries), params.b)


def rho_drift_chordal(xi: float, force_points: list[float], rho: list[float]) -> float:
    """Explicit SLE(kappa, rho) drift ``sum_k rho_k/(xi - q_k)``."""
    return float(sum(r / (xi - q) for q, r in zip(force_points, rho)))


def rho_drift_radial(theta: float, force_angles: list[float], rho: list[float], eta: float = 0.0) -> float:
    """Explicit radial drift ``eta + sum_k (rho_k/2) cot((theta - theta_k)/2)``."""
    return float(eta + sum(r / 2 / math.tan((theta - th) / 2) for th, r in zip(force_angles, rho)))
