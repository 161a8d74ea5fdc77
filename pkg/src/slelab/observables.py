"""Martingale observables evaluated on Loewner map data.

Evaluators take a :class:`PointData` view: arrays of ``g, g', g'', g''',
log g', log g`` plus the driving value and time, one entry per path (or a
single entry for one state).  Multivalued powers use the continuously
integrated ``log g'`` and ``log g`` carried by the integrator, so their
branches follow the path from the principal branch at ``t = 0``.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from functools import lru_cache
from typing import Any, Callable, Sequence

import numpy as np
import sympy as sp

from . import loewner as lw
from .partition import SleParams


class PhaseJumpError(ValueError):
    """A tracked phase moved by at least ``pi`` in one step."""


def check_phase_continuity(log_series: Any, limit: float = math.pi) -> None:
    """Reject a step whose continuous phase ``Im log`` jumps by ``limit`` or more.

    ``log_series`` is indexed by step along its first axis.  Tracked logs
    are integrated as ODE components, so a jump signals a step too coarse
    for the branch to be followed.
    """
    ph = np.imag(np.asarray(log_series, dtype=complex))
    if ph.shape[0] < 2:
        return
    jumps = np.abs(np.diff(ph, axis=0))
    jumps = np.where(np.isfinite(jumps), jumps, 0.0)
    if np.any(jumps >= limit):
        k = int(np.argwhere(jumps >= limit)[0][0])
        raise PhaseJumpError(f"phase jumped by {float(jumps.reshape(len(jumps), -1)[k].max()):.3f} at step {k + 1}")


class SwallowedPointError(ValueError):
    """The requested point has been swallowed (or stopped) in this state."""


@dataclass(frozen=True)
class PointData:
    """Vectorized map data of one tracked point.

    All arrays share a shape; ``drive`` is ``xi`` (chordal) or ``theta``
    (radial) and ``t`` is the capacity time at which the data was taken.
    """

    geometry: int
    g: np.ndarray
    g1: np.ndarray
    g2: np.ndarray
    g3: np.ndarray
    log_g1: np.ndarray
    log_g: np.ndarray
    drive: np.ndarray
    t: np.ndarray

    @classmethod
    def from_state(cls, state: lw.LoewnerState, z: complex, *, allow_swallowed: bool = False) -> "PointData":
        i = state.index(z)
        if not state.alive[i] and not allow_swallowed:
            raise SwallowedPointError(f"point {z} was swallowed at t={state.tau[i]}")
        y = state.y[i]
        arr = lambda v: np.asarray([v])  # noqa: E731
        return cls(state.geometry, arr(y[lw.Y_G]), arr(y[lw.Y_G1]), arr(y[lw.Y_G2]), arr(y[lw.Y_G3]),
                   arr(y[lw.Y_LOG_G1]), arr(y[lw.Y_LOG_G]), arr(state.driving), arr(state.t))

    @classmethod
    def from_batch(cls, geometry: int, y: np.ndarray, drive: np.ndarray, t: np.ndarray) -> "PointData":
        """``y`` has shape ``(..., 6)``; ``drive`` and ``t`` match ``y.shape[:-1]``."""
        return cls(geometry, y[..., lw.Y_G], y[..., lw.Y_G1], y[..., lw.Y_G2], y[..., lw.Y_G3],
                   y[..., lw.Y_LOG_G1], y[..., lw.Y_LOG_G], drive, t)

    @property
    def zeta(self) -> np.ndarray:
        if self.geometry == lw.CHORDAL:
            return self.drive.astype(complex)
        return np.exp(1j * self.drive)

    @property
    def w(self) -> np.ndarray:
        if self.geometry == lw.CHORDAL:
            return self.g - self.drive
        return self.g * np.exp(-1j * self.drive)

    @property
    def log_w(self) -> np.ndarray:
        """Continuous ``log w`` (radial); principal ``log(g - xi)`` (chordal)."""
        if self.geometry == lw.CHORDAL:
            return np.log(self.w)
        return self.log_g - 1j * self.drive

    @property
    def w1(self) -> np.ndarray:
        if self.geometry == lw.CHORDAL:
            return self.g1
        return self.g1 * np.exp(-1j * self.drive)

    @property
    def log_w1(self) -> np.ndarray:
        if self.geometry == lw.CHORDAL:
            return self.log_g1
        return self.log_g1 - 1j * self.drive

    @property
    def schwarzian(self) -> np.ndarray:
        """``w'''/w' - (3/2)(w''/w')^2``; rotations and translations leave it unchanged."""
        n = self.g2 / self.g1
        return self.g3 / self.g1 - 1.5 * n * n


# ---------------------------------------------------------------------------
# catalog


def schramm_sheffield(p: PointData, params: SleParams) -> np.ndarray:
    """Chordal ``2a arg w - 2b arg w'``; radial ``2a arg(1-w) - a arg w - 2b arg(w'/w)``."""
    a, b = params.a, params.b
    if p.geometry == lw.CHORDAL:
        return 2 * a * np.angle(p.w) - 2 * b * p.log_g1.imag
    arg_w = p.log_w.imag
    arg_ratio = (p.log_g1 - p.log_g).imag
    return 2 * a * np.angle(1 - p.w) - a * arg_w - 2 * b * arg_ratio


def vertex_dims(params: SleParams, tau_plus: complex, tau_minus: complex,
                tauq_plus: complex, tauq_minus: complex) -> dict[str, complex]:
    """Exponents of the radial one-point vertex observable."""
    a, b = params.a, params.b
    lam = lambda s: s * s / 2 - s * b  # noqa: E731
    return {
        "h_plus": lam(tau_plus),
        "h_minus": lam(tau_minus),
        "hq_plus": tauq_plus * (tauq_plus - a) / 2,
        "hq_minus": tauq_minus * (tauq_minus - a) / 2,
        "nu_plus": tau_plus * (tauq_plus + b - a / 2),
        "nu_minus": tau_minus * (tauq_minus + b - a / 2),
    }


def vertex_1pt(p: PointData, params: SleParams, tau_plus: complex, tau_minus: complex,
               tauq_plus: complex, tauq_minus: complex, *, check_neutral: bool = True) -> np.ndarray:
    """Radial one-point vertex observable ``E O_beta[tau]`` transported by ``w_t``."""
    if p.geometry != lw.RADIAL:
        raise ValueError("the one-point vertex observable is radial")
    total = tau_plus + tau_minus + tauq_plus + tauq_minus
    if check_neutral and abs(total) > 1e-12:
        raise ValueError("tau must be neutral: tau+ + tau- + tau_q+ + tau_q- = 0")
    d = vertex_dims(params, tau_plus, tau_minus, tauq_plus, tauq_minus)
    a = params.a
    log_wq = p.t - 1j * p.drive
    log_w1 = p.log_w1
    log_w = p.log_w
    w = p.w
    log_1mw = np.log(1 - w)
    log_disc = np.log(1 - np.abs(w) ** 2)
    expo = (
        d["hq_plus"] * log_wq + d["hq_minus"] * np.conj(log_wq)
        + d["h_plus"] * log_w1 + d["h_minus"] * np.conj(log_w1)
        + d["nu_plus"] * log_w + d["nu_minus"] * np.conj(log_w)
        + a * tau_plus * log_1mw + a * tau_minus * np.conj(log_1mw)
        + tau_plus * tau_minus * log_disc
    )
    return np.exp(expo)


def poisson_ratio(p: PointData) -> np.ndarray:
    """``(1 - |w|^2)/|1 - w|^2``, the kappa = 2 observable in closed form."""
    w = p.w
    return (1 - np.abs(w) ** 2) / np.abs(1 - w) ** 2


def lsw_kappa6(p: PointData) -> np.ndarray:
    """``e^{t/4} (1 - w)^{1/3} w^{-1/6}`` with the continuous branch of ``log w``."""
    if p.geometry != lw.RADIAL:
        raise ValueError("radial observable")
    return np.exp(p.t / 4 + np.log(1 - p.w) / 3 - p.log_w / 6)


def lsw_sigma(params: SleParams, h: float) -> float:
    k, a = params.kappa, params.a
    return a / 4 * (k - 4 + math.sqrt((k - 4) ** 2 + 16 * k * h))


def lsw_hq(params: SleParams, h: float) -> float:
    s = lsw_sigma(params, h)
    return s * s / 8 + params.a * s / 4


def lsw_boundary_exponent(p: PointData, params: SleParams, h: float) -> np.ndarray:
    """``e^{2 h_q t} |w'|^h (sin^2(theta_t/2))^{a sigma/2}`` for a boundary point ``w = e^{i theta_t}``."""
    if p.geometry != lw.RADIAL:
        raise ValueError("radial observable")
    s = lsw_sigma(params, h)
    hq = lsw_hq(params, h)
    theta_t = p.log_w.imag
    sin2 = np.sin(theta_t / 2) ** 2
    return np.exp(2 * hq * p.t + h * p.log_g1.real) * sin2 ** (params.a * s / 2)


def sle0_invariants(p: PointData) -> tuple[np.ndarray, np.ndarray]:
    """``arg((1-w) w^{-3/2} w')`` and ``S_w + (3/8)(w'/w)^2 (1 - 4w/(1-w)^2)``."""
    if p.geometry != lw.RADIAL:
        raise ValueError("radial observable")
    w = p.w
    first = np.angle(1 - w) - 1.5 * p.log_w.imag + p.log_w1.imag
    r = p.w1 / w
    second = p.schwarzian + 0.375 * r * r * (1 - 4 * w / (1 - w) ** 2)
    return first, second


def sheffield_neumann(p: PointData, params: SleParams) -> np.ndarray:
    """Backward chordal ``-2a log|f - xi| + 2b log|f'|``."""
    if p.geometry != lw.CHORDAL:
        raise ValueError("chordal observable")
    return -2 * params.a * np.log(np.abs(p.w)) + 2 * params.b * p.log_g1.real


# ---------------------------------------------------------------------------
# state-level wrappers


def eval_schramm_sheffield(state: lw.LoewnerState, z: complex, params: SleParams) -> float:
    return float(schramm_sheffield(PointData.from_state(state, z), params)[0])


def eval_vertex_1pt(state: lw.LoewnerState, z: complex, params: SleParams, tau_plus: complex,
                    tau_minus: complex, tauq_plus: complex, tauq_minus: complex) -> complex:
    p = PointData.from_state(state, z)
    return complex(vertex_1pt(p, params, tau_plus, tau_minus, tauq_plus, tauq_minus)[0])


def eval_lsw_kappa6(state: lw.LoewnerState, z: complex) -> complex:
    return complex(lsw_kappa6(PointData.from_state(state, z))[0])


def eval_lsw_boundary_exponent(state: lw.LoewnerState, theta: float, h: float, params: SleParams) -> float:
    p = PointData.from_state(state, cmath.exp(1j * theta))
    return float(lsw_boundary_exponent(p, params, h)[0])


def eval_sle0_invariants(state: lw.LoewnerState, z: complex) -> tuple[float, complex]:
    first, second = sle0_invariants(PointData.from_state(state, z))
    return float(first[0]), complex(second[0])


def eval_sheffield_neumann(state: lw.LoewnerState, z: complex, params: SleParams) -> float:
    if state.sign > 0:
        raise ValueError("needs a backward state")
    return float(sheffield_neumann(PointData.from_state(state, z), params)[0])


# ---------------------------------------------------------------------------
# Green's functions and Hadamard rates


class GreensKernel(str, Enum):
    DIRICHLET_H = "dirichlet_H"
    DIRICHLET_D = "dirichlet_D"
    NEUMANN_H = "neumann_H"


def eval_greens(kernel: GreensKernel | str, z: Any, w: Any) -> Any:
    """Closed-form Green's functions (vectorized over numpy inputs)."""
    kernel = GreensKernel(kernel)
    z = np.asarray(z, dtype=complex)
    w = np.asarray(w, dtype=complex)
    if np.any(np.abs(z - w) == 0):
        raise ValueError("coincident points")
    if kernel is GreensKernel.DIRICHLET_H:
        out = np.log(np.abs((z - np.conj(w)) / (z - w)))
    elif kernel is GreensKernel.DIRICHLET_D:
        out = np.log(np.abs((1 - z * np.conj(w)) / (z - w)))
    else:
        out = -np.log(np.abs((z - w) * (z - np.conj(w))))
    return float(out) if out.ndim == 0 else out


def hadamard_radial_rate(w1: Any, w2: Any) -> Any:
    """``-Re((1+w1)/(1-w1)) Re((1+w2)/(1-w2))``: time derivative of ``G_D(w1, w2)``."""
    a1 = (1 + np.asarray(w1)) / (1 - np.asarray(w1))
    a2 = (1 + np.asarray(w2)) / (1 - np.asarray(w2))
    return -a1.real * a2.real


def hadamard_neumann_rate(u1: Any, u2: Any) -> Any:
    """``-4 Re(1/u1) Re(1/u2)`` with ``u = f - xi``: time derivative of ``G_N`` under the backward flow."""
    return -4 * (1 / np.asarray(u1)).real * (1 / np.asarray(u2)).real


# ---------------------------------------------------------------------------
# restriction (vertical slit)


@dataclass(frozen=True)
class VerticalSlit:
    """The hull ``[x0, x0 + i h]`` sampled at ``n`` equally spaced heights (base excluded)."""

    x0: float
    h: float
    n: int = 64

    def points(self) -> list[complex]:
        ys = self.h * np.arange(1, self.n + 1) / self.n
        return [complex(self.x0, y) for y in ys]

    def psi(self, z: Any) -> Any:
        """Hydrodynamic slit map ``x0 + (z - x0) sqrt(1 + h^2/(z - x0)^2)``."""
        u = np.asarray(z, dtype=complex) - self.x0
        return self.x0 + u * np.sqrt(1 + self.h ** 2 / u ** 2)

    def psi_prime(self, x: Any) -> Any:
        u = np.asarray(x, dtype=complex) - self.x0
        return 1 / np.sqrt(1 + self.h ** 2 / u ** 2)


def zipper_map(slit_images: np.ndarray, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Hydrodynamic map removing a hull given by ordered samples, evaluated on real points.

    The hull is approximated by successive vertical slits: at stage ``k`` the
    current image ``z_k`` of sample ``k`` is removed with
    ``z -> u + (z - u) sqrt(1 + y^2/(z - u)^2)``, ``u + iy = z_k``.  Returns
    ``h(x)`` and ``h'(x)``.  ``slit_images`` has shape ``(..., K)`` and ``x``
    shape ``(..., m)``.  Samples whose images have collapsed onto one real
    point give ``nan``.
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        return _zipper(slit_images, x)


def _zipper(slit_images: np.ndarray, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    z = np.array(slit_images, dtype=complex, copy=True)
    xs = np.array(x, dtype=complex, copy=True)
    deriv = np.ones(xs.shape, dtype=complex)
    K = z.shape[-1]
    for k in range(K):
        c = z[..., k]
        u = c.real[..., None]
        y2 = (c.imag ** 2)[..., None]
        if k + 1 < K:
            rest = z[..., k + 1:] - u
            z[..., k + 1:] = u + rest * np.sqrt(1 + y2 / rest ** 2)
        dx = xs - u
        root = np.sqrt(1 + y2 / dx ** 2)
        deriv = deriv / root
        xs = u + dx * root
    return xs.real, deriv.real


def restriction_martingale(xi: Any, slit_images: np.ndarray, params: SleParams,
                           force: np.ndarray | None = None, beta: Sequence[float] = ()) -> np.ndarray:
    """``h_t'(xi)^lambda`` times force-point factors, with ``h_t`` from :func:`zipper_map`.

    ``force`` holds the current images ``g_t(q_j)`` of force points with
    charges ``beta``; the factors are
    ``h'(q_j)^{lambda_j} ((h(xi) - h(q_j))/(xi - q_j))^{a beta_j}`` and
    ``((h(q_j) - h(q_k))/(q_j - q_k))^{beta_j beta_k}``.
    """
    xi = np.asarray(xi, dtype=float)
    pts = xi[..., None]
    if force is not None and len(beta):
        pts = np.concatenate([pts, np.asarray(force, dtype=float)], axis=-1)
    hx, hp = zipper_map(slit_images, pts)
    lam = params.h
    out = hp[..., 0] ** lam
    a, b = params.a, params.b
    for j, bj in enumerate(beta):
        lj = bj * bj / 2 - bj * b
        qj = pts[..., 1 + j]
        out = out * hp[..., 1 + j] ** lj
        out = out * ((hx[..., 0] - hx[..., 1 + j]) / (pts[..., 0] - qj)) ** (a * bj)
        for k in range(j + 1, len(beta)):
            qk = pts[..., 1 + k]
            out = out * ((hx[..., 1 + j] - hx[..., 1 + k]) / (qj - qk)) ** (bj * beta[k])
    return out


def eval_restriction_chordal(state: lw.LoewnerState, hull: VerticalSlit, params: SleParams) -> float:
    """Restriction martingale for a forward chordal state tracking the hull samples.

    The state must track ``hull.x0`` and every point of ``hull.points()``.
    Returns ``nan`` once a hull sample has been swallowed (the path hit the hull).
    """
    if state.geometry != lw.CHORDAL or state.sign < 0:
        raise ValueError("needs a forward chordal state")
    idx = [state.index(complex(hull.x0))] + [state.index(z) for z in hull.points()]
    if not state.alive[idx].all():
        return float("nan")
    images = state.y[idx[1:], lw.Y_G]
    return float(restriction_martingale(np.array(state.driving), images, params))


def restriction_exponents(kappa: float | Fraction = 8 / 3) -> tuple[float | Fraction, float | Fraction]:
    """``lambda = (6 - kappa)/(2 kappa)`` and ``mu = (kappa - 2)(6 - kappa)/(8 kappa)``.

    A :class:`~fractions.Fraction` ``kappa`` gives exact rational exponents.
    """
    return (6 - kappa) / (2 * kappa), (kappa - 2) * (6 - kappa) / (8 * kappa)


def central_charge(kappa: float) -> float:
    return (3 * kappa - 8) * (6 - kappa) / (2 * kappa)


# ---------------------------------------------------------------------------
# n-point recursion for the radial Virasoro field


@lru_cache(maxsize=None)
def _recursion_expr(n: int, kappa: sp.Rational | float) -> tuple[sp.Expr, tuple[sp.Symbol, ...]]:
    zs = sp.symbols(f"z1:{n + 1}")
    k = sp.nsimplify(kappa)
    a2 = 2 / k
    b2 = a2 * (k / 4 - 1) ** 2
    ab = a2 * (k / 4 - 1)
    lam = a2 / 2 - ab
    mu = a2 / 4 - b2
    c = (3 * k - 8) * (6 - k) / (2 * k)

    @lru_cache(maxsize=None)
    def R(vars_: tuple[sp.Symbol, ...]) -> sp.Expr:
        if not vars_:
            return sp.Integer(1)
        z, rest = vars_[0], vars_[1:]
        m = len(rest)
        base = R(rest)
        e = (1 + z) / (1 - z)
        out = (2 * m * e + 2 * lam * z / (1 - z) ** 2 + mu) * base
        out += e * sum(zj * sp.diff(base, zj) for zj in rest)
        for zj in rest:
            out += zj * (z + zj) / (z - zj) * sp.diff(base, zj)
            out += 2 * (z ** 2 + 2 * z * zj - zj ** 2) / (z - zj) ** 2 * base
        out = out / (2 * z ** 2)
        for j, zj in enumerate(rest):
            out += c / 2 / (z - zj) ** 4 * R(rest[:j] + rest[j + 1:])
        return out

    return R(tuple(zs)), tuple(zs)


@lru_cache(maxsize=None)
def _recursion_fn(n: int, kappa: float) -> Callable[..., complex]:
    expr, zs = _recursion_expr(n, kappa)
    return sp.lambdify(zs, expr, modules="numpy")


def virasoro_npoint_recursion(angles: Sequence[float], kappa: float = 8 / 3) -> complex:
    """``R(1; e^{i theta_1}, ..., e^{i theta_n})`` from the Ward-identity recursion.

    Angles must be distinct and nonzero mod ``2 pi``.  The value is complex
    in general.
    """
    th = [float(t) for t in angles]
    zs = [cmath.exp(1j * t) for t in th]
    for i, z in enumerate(zs):
        if abs(z - 1) < 1e-12:
            raise ValueError("angles must be nonzero mod 2 pi")
        for w in zs[i + 1:]:
            if abs(z - w) < 1e-12:
                raise ValueError("angles must be distinct")
    if not zs:
        return 1.0 + 0j
    return complex(_recursion_fn(len(zs), float(kappa))(*zs))


def one_point_virasoro_closed_form(z: complex, kappa: float = 8 / 3) -> complex:
    """``h_{1,2}/(z(1-z)^2) + h_{0,1/2}/z^2``."""
    h12 = (6 - kappa) / (2 * kappa)
    h0 = (6 - kappa) * (kappa - 2) / (16 * kappa)
    return h12 / (z * (1 - z) ** 2) + h0 / z ** 2


# ---------------------------------------------------------------------------
# observable specs (used by the verification harness and the CLI)


@dataclass
class ObservableSpec:
    """Named catalog observable with its parameters.

    ``params`` are the charges used inside the formula; they may differ from
    the simulated process (that is how negative controls are built).
    """

    kind: str
    params: SleParams
    options: dict[str, Any] = field(default_factory=dict)

    KINDS = ("schramm_sheffield", "vertex_1pt", "poisson", "lsw_kappa6", "lsw_boundary_exponent",
             "sheffield_neumann", "zero")

    def __post_init__(self) -> None:
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown observable kind {self.kind!r}")

    def __call__(self, p: PointData) -> np.ndarray:
        k = self.kind
        if k == "schramm_sheffield":
            return schramm_sheffield(p, self.params)
        if k == "vertex_1pt":
            o = self.options
            return vertex_1pt(p, self.params, o["tau_plus"], o["tau_minus"], o["tauq_plus"], o["tauq_minus"])
        if k == "poisson":
            return poisson_ratio(p)
        if k == "lsw_kappa6":
            return lsw_kappa6(p)
        if k == "lsw_boundary_exponent":
            return lsw_boundary_exponent(p, self.params, self.options.get("h", 0.0))
        if k == "sheffield_neumann":
            return sheffield_neumann(p, self.params)
        return np.zeros(np.shape(p.g))
