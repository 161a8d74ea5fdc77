"""Loewner evolution: forward/backward, chordal/radial.

Each tracked point carries the vector ``y = (g, g', g'', g''', log g', log g)``.
Derivatives follow the exact variational equations of the flow, and
``log g'`` / ``log g`` are integrated directly so their imaginary parts stay
continuous along the path (no after-the-fact unwrapping).  ``log g`` is only
evolved in the radial geometry and only away from the fixed point 0.

Integration is classical RK4 with the driving function interpolated linearly
inside a step (the angle is interpolated in the radial case).  Near the
driving singularity the step is halved until ``2h/dist <= c_sub * dist``;
``dist`` is measured to the segment (or arc) swept by the driving point.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from numba import njit

CHORDAL = 0
RADIAL = 1

EPS_SWALLOW = 1e-4
DT_MIN = 1e-9
C_SUB = 0.2

# Monte Carlo kernel: swallowing threshold, step floor and bridge refinement
EPS_KERNEL = 1e-8
DT_MIN_KERNEL = 1e-18
K_REFINE = 10.0
MAX_DEPTH = 60

# per-point status codes returned by the kernels
OK = 0
SWALLOWED = 1
DT_FLOOR = 2

Y_G, Y_G1, Y_G2, Y_G3, Y_LOG_G1, Y_LOG_G = range(6)
NY = 6


class LoewnerError(RuntimeError):
    """Raised when a backward flow reaches the step-size floor near its pole."""


# ---------------------------------------------------------------------------
# numba kernels
#
# The integrator works on scalars: one point's six components are loaded
# into locals, advanced across the step (with substeps if needed) and stored
# back.  Complex reciprocals use a single real division.


@njit(cache=True, nogil=True, inline="always")
def _cinv(u):
    r = 1.0 / (u.real * u.real + u.imag * u.imag)
    return complex(u.real * r, -u.imag * r)


@njit(cache=True, nogil=True)
def _drive_point(geom, d):
    if geom == CHORDAL:
        return complex(d, 0.0)
    return complex(math.cos(d), math.sin(d))


@njit(cache=True, nogil=True)
def _mid_point(geom, da, db, pa, pb):
    """Driving point at the middle of a step (normalized chord midpoint on the circle)."""
    if geom == CHORDAL:
        return complex(0.5 * (da + db), 0.0)
    m = pa + pb
    r = abs(m)
    if r < 1e-3:
        return _drive_point(geom, 0.5 * (da + db))
    return m / r


@njit(cache=True, nogil=True, inline="always")
def _jet(geom, sign, g, p):
    """Vector field, its first three derivatives, and ``F/g`` at ``g``."""
    if geom == CHORDAL:
        inv = _cinv(g - p)
        i2 = inv * inv
        return (sign * 2.0 * inv, -sign * 2.0 * i2, sign * 4.0 * i2 * inv,
                -sign * 12.0 * i2 * i2, 0j)
    inv = _cinv(p - g)
    i2 = inv * inv
    zz = p * p
    f0 = -(g + 2.0 * p) + 2.0 * zz * inv
    return (sign * f0, sign * (-1.0 + 2.0 * zz * i2), sign * 4.0 * zz * i2 * inv,
            sign * 12.0 * zz * i2 * i2, sign * (p + g) * inv)


@njit(cache=True, nogil=True, inline="always")
def _rhs(geom, sign, g, g1, g2, g3, p):
    f0, f1, f2, f3, lg = _jet(geom, sign, g, p)
    return (f0, f1 * g1, f2 * g1 * g1 + f1 * g2,
            f3 * g1 * g1 * g1 + 3.0 * f2 * g1 * g2 + f1 * g3, f1, lg)


@njit(cache=True, nogil=True)
def _rk4(geom, sign, g, g1, g2, g3, L, lg, pa, pm, pb, h):
    a0, a1, a2, a3, a4, a5 = _rhs(geom, sign, g, g1, g2, g3, pa)
    q = 0.5 * h
    b0, b1, b2, b3, b4, b5 = _rhs(geom, sign, g + q * a0, g1 + q * a1, g2 + q * a2, g3 + q * a3, pm)
    c0, c1, c2, c3, c4, c5 = _rhs(geom, sign, g + q * b0, g1 + q * b1, g2 + q * b2, g3 + q * b3, pm)
    e0, e1, e2, e3, e4, e5 = _rhs(geom, sign, g + h * c0, g1 + h * c1, g2 + h * c2, g3 + h * c3, pb)
    s = h / 6.0
    return (
        g + s * (a0 + 2.0 * b0 + 2.0 * c0 + e0),
        g1 + s * (a1 + 2.0 * b1 + 2.0 * c1 + e1),
        g2 + s * (a2 + 2.0 * b2 + 2.0 * c2 + e2),
        g3 + s * (a3 + 2.0 * b3 + 2.0 * c3 + e3),
        L + s * (a4 + 2.0 * b4 + 2.0 * c4 + e4),
        lg + s * (a5 + 2.0 * b5 + 2.0 * c5 + e5),
    )


@njit(cache=True, nogil=True)
def _dist(geom, g, da, db, pa, pb):
    """Distance from ``g`` to the driving segment/arc between ``da`` and ``db``.

    ``pa``/``pb`` are the corresponding driving points (``e^{i theta}`` in
    the radial geometry).
    """
    if geom == CHORDAL:
        lo = min(da, db)
        hi = max(da, db)
        x = g.real
        if lo <= x <= hi:
            return abs(g.imag)
        return min(abs(g - lo), abs(g - hi))
    d = min(abs(g - pa), abs(g - pb))
    delta = db - da
    if d <= abs(delta) + abs(1.0 - abs(g)) and g != 0:
        c = g * pa.conjugate()
        phi = math.atan2(c.imag, c.real)
        if phi * delta >= 0.0 and abs(phi) <= abs(delta):
            d = min(d, abs(1.0 - abs(g)))
    return d


@njit(cache=True, nogil=True)
def _advance(geom, sign, Y, i, boundary, da, db, pa, pm, pb, dt, c_sub, eps, dt_min):
    """Advance point ``i`` across a driving step.

    Returns ``(status, time used, final distance to the driving point)``.

    ``pa``, ``pm``, ``pb`` are the driving points at the start, middle and
    end of the full step; substeps recompute their own.
    """
    g = Y[i, 0]
    g1 = Y[i, 1]
    g2 = Y[i, 2]
    g3 = Y[i, 3]
    L = Y[i, 4]
    lg = Y[i, 5]
    if dt <= 0.0:
        return OK, 0.0, _dist(geom, g, da, da, pa, pa)
    status = OK
    s = 0.0
    while s < dt:
        h = dt - s
        while True:
            a = da + (db - da) * (s / dt)
            b = da + (db - da) * ((s + h) / dt)
            if s == 0.0 and h == dt:
                qa = pa
                qb = pb
            else:
                qa = _drive_point(geom, a)
                qb = _drive_point(geom, b)
            dist = _dist(geom, g, a, b, qa, qb)
            if dist < eps:
                status = SWALLOWED
                break
            if 2.0 * h <= c_sub * dist * dist:
                break
            h *= 0.5
            if h < dt_min:
                status = DT_FLOOR
                break
        if status != OK:
            break
        if s == 0.0 and h == dt:
            qm = pm
        else:
            qm = _mid_point(geom, a, b, qa, qb)
        g, g1, g2, g3, L, lg = _rk4(geom, sign, g, g1, g2, g3, L, lg, qa, qm, qb, h)
        if boundary:
            if geom == CHORDAL:
                g = complex(g.real, 0.0)
                g1 = complex(g1.real, 0.0)
                g2 = complex(g2.real, 0.0)
                g3 = complex(g3.real, 0.0)
                L = complex(L.real, 0.0)
            else:
                r = abs(g)
                if r > 0:
                    g = g / r
                lg = complex(0.0, lg.imag)
        s += h
        if s >= dt * (1.0 - 1e-15):
            s = dt
    Y[i, 0] = g
    Y[i, 1] = g1
    Y[i, 2] = g2
    Y[i, 3] = g3
    Y[i, 4] = L
    Y[i, 5] = lg
    if status == OK:
        final = _dist(geom, g, db, db, pb, pb)
        if final < eps:
            return SWALLOWED, dt, final
        return OK, dt, final
    return status, s, 0.0


@njit(cache=True, nogil=True)
def _step_all(geom, sign, Y, boundary, alive, tau, t, da, db, dt, c_sub, eps, dt_min, status):
    """Advance every alive point; swallowed points are frozen and get ``tau``."""
    pa = _drive_point(geom, da)
    pb = _drive_point(geom, db)
    pm = _mid_point(geom, da, db, pa, pb)
    for i in range(Y.shape[0]):
        if not alive[i]:
            continue
        st, used, _ = _advance(geom, sign, Y, i, boundary[i], da, db, pa, pm, pb, dt, c_sub, eps, dt_min)
        if st != OK:
            alive[i] = False
            tau[i] = t + used
            status[i] = st


@njit(cache=True, nogil=True)
def _drift(geom, d, Y, n_force, rho, eta):
    acc = eta if geom == RADIAL else 0.0
    for k in range(n_force):
        q = Y[k, 0]
        if geom == CHORDAL:
            acc += rho[k] / (d - q.real)
        else:
            phi = math.atan2(q.imag, q.real)
            acc += 0.5 * rho[k] / math.tan(0.5 * (d - phi))
    return acc


@njit(cache=True, nogil=True)
def _refined_step(
    geom, sign, kappa, Y, boundary, alive, t, da, db, dt, c_sub, eps, dt_min, r_stop, k_ref, max_depth,
    tau, status, stop_drive, stop_time, min_dist, st_a, st_b, st_h, st_dep,
):
    """Advance every alive point across one driving step, refining the driving near the tip.

    While some alive point is closer to the driving point than
    ``k_ref * sqrt(kappa * h)``, the segment is split at a Brownian-bridge
    midpoint (numba's generator, seeded per path by the caller).  Without
    refinement a linearly interpolated driving function cannot resolve the
    absorbing layer of width ``sqrt(kappa h)`` around the tip.
    """
    st_a[0] = da
    st_b[0] = db
    st_h[0] = dt
    st_dep[0] = 0
    top = 1
    tt = t
    while top > 0:
        top -= 1
        a = st_a[top]
        b = st_b[top]
        h = st_h[top]
        dep = st_dep[top]
        pa = _drive_point(geom, a)
        if k_ref > 0.0 and dep < max_depth:
            m = np.inf
            for i in range(Y.shape[0]):
                if alive[i]:
                    di = _dist(geom, Y[i, 0], a, a, pa, pa)
                    if di < m:
                        m = di
            if m < k_ref * math.sqrt(kappa * h):
                mid = 0.5 * (a + b) + 0.5 * math.sqrt(kappa * h) * np.random.standard_normal()
                st_a[top] = mid
                st_b[top] = b
                st_h[top] = 0.5 * h
                st_dep[top] = dep + 1
                st_a[top + 1] = a
                st_b[top + 1] = mid
                st_h[top + 1] = 0.5 * h
                st_dep[top + 1] = dep + 1
                top += 2
                continue
        pb = _drive_point(geom, b)
        pm = _mid_point(geom, a, b, pa, pb)
        for i in range(Y.shape[0]):
            if not alive[i]:
                continue
            st, used, dd = _advance(geom, sign, Y, i, boundary[i], a, b, pa, pm, pb, h, c_sub, eps, dt_min)
            if st != OK:
                alive[i] = False
                tau[i] = tt + used
                status[i] = st
                stop_drive[i] = b
                stop_time[i] = tt + used
                continue
            if dd < min_dist[i]:
                min_dist[i] = dd
            if dd < r_stop:
                alive[i] = False
                tau[i] = tt + h
                status[i] = SWALLOWED
                stop_drive[i] = b
                stop_time[i] = tt + h
        tt += h


@njit(cache=True, nogil=True)
def run_path_kernel(
    geom, sign, kappa, normals, dt, drive0, Y0, boundary, n_force, rho, eta,
    rec_steps, eps, r_stop, c_sub, dt_min, k_ref, bridge_seed,
    rec_y, rec_drive, rec_time, rec_alive, tau, status, min_dist, drive_out,
):
    """Simulate one path with the explicit rho-sum drift.

    ``normals`` are standard normal increments (one per step); the driving
    update is Euler-Maruyama ``d += drift dt + sqrt(kappa dt) N``.  Inside a
    step the driving is refined by Brownian bridges near the tip (see
    :func:`_refined_step`; ``k_ref = 0`` disables it).  Points are frozen once
    swallowed, once ``|w| < r_stop``, or when a force point is swallowed (the
    whole path is truncated then).  Frozen points keep the driving value and
    time at which they stopped.  Returns True if the path was truncated.
    """
    if k_ref > 0.0:
        np.random.seed(bridge_seed)
    n_pts = Y0.shape[0]
    n_steps = normals.shape[0]
    Y = Y0.copy()
    alive = np.ones(n_pts, dtype=np.bool_)
    stop_drive = np.full(n_pts, drive0)
    stop_time = np.zeros(n_pts)
    st_a = np.empty(MAX_DEPTH + 2)
    st_b = np.empty(MAX_DEPTH + 2)
    st_h = np.empty(MAX_DEPTH + 2)
    st_dep = np.empty(MAX_DEPTH + 2, dtype=np.int64)
    p0 = _drive_point(geom, drive0)
    for i in range(n_pts):
        tau[i] = np.nan
        status[i] = OK
        min_dist[i] = _dist(geom, Y[i, 0], drive0, drive0, p0, p0)
    sq = math.sqrt(kappa * dt)
    has_drift = n_force > 0 or eta != 0.0
    d = drive0
    t = 0.0
    truncated = False
    r = 0
    n_rec = rec_steps.shape[0]
    while r < n_rec and rec_steps[r] == 0:
        for i in range(n_pts):
            for c in range(NY):
                rec_y[r, i, c] = Y[i, c]
            rec_drive[r, i] = d
            rec_time[r, i] = 0.0
            rec_alive[r, i] = True
        r += 1
    if drive_out.shape[0] > 0:
        drive_out[0] = d
    for n in range(n_steps):
        if r >= n_rec and drive_out.shape[0] == 0:
            break
        if truncated:
            d_next = d
        else:
            drift = _drift(geom, d, Y, n_force, rho, eta) if has_drift else 0.0
            d_next = d + drift * dt + sq * normals[n]
            _refined_step(geom, sign, kappa, Y, boundary, alive, t, d, d_next, dt, c_sub, eps, dt_min,
                          r_stop, k_ref, MAX_DEPTH, tau, status, stop_drive, stop_time, min_dist,
                          st_a, st_b, st_h, st_dep)
            for k in range(n_force):
                if not alive[k]:
                    truncated = True
            if truncated:
                for i in range(n_pts):
                    if alive[i]:
                        alive[i] = False
                        stop_drive[i] = d_next
                        stop_time[i] = t + dt
        d = d_next
        t += dt
        if drive_out.shape[0] > 0:
            drive_out[n + 1] = d
        while r < n_rec and rec_steps[r] == n + 1:
            for i in range(n_pts):
                for c in range(NY):
                    rec_y[r, i, c] = Y[i, c]
                rec_alive[r, i] = alive[i]
                rec_drive[r, i] = d if alive[i] else stop_drive[i]
                rec_time[r, i] = t if alive[i] else stop_time[i]
            r += 1
    return truncated

# ---------------------------------------------------------------------------
# python-level state


@dataclass
class LoewnerState:
    """Map data for one path.

    ``y`` has one row per tracked point (see module docstring for columns);
    the first ``n_force`` rows are force points.  ``driving`` is ``xi`` in
    the chordal geometry and the angle ``theta`` in the radial geometry.
    """

    geometry: int
    sign: int
    t: float
    driving: float
    z0: np.ndarray
    y: np.ndarray
    boundary: np.ndarray
    alive: np.ndarray
    tau: np.ndarray
    n_force: int = 0
    status: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @classmethod
    def new(
        cls,
        points: Iterable[complex],
        *,
        geometry: int = CHORDAL,
        backward: bool = False,
        driving: float = 0.0,
        force_points: Sequence[complex] = (),
    ) -> "LoewnerState":
        pts = [complex(q) for q in force_points] + [complex(z) for z in points]
        z0 = np.array(pts, dtype=complex)
        n = len(pts)
        y = np.zeros((n, NY), dtype=complex)
        y[:, Y_G] = z0
        y[:, Y_G1] = 1.0
        if geometry == RADIAL:
            with np.errstate(divide="ignore"):
                y[:, Y_LOG_G] = np.where(z0 != 0, np.log(np.where(z0 != 0, z0, 1.0)), 0.0)
        boundary = np.array([_on_boundary(geometry, z) for z in pts], dtype=bool)
        return cls(
            geometry, -1 if backward else 1, 0.0, float(driving), z0, y, boundary,
            np.ones(n, dtype=bool), np.full(n, np.nan), len(force_points), np.zeros(n, dtype=np.int64),
        )

    def copy(self) -> "LoewnerState":
        return replace(
            self, y=self.y.copy(), alive=self.alive.copy(), tau=self.tau.copy(), status=self.status.copy()
        )

    @property
    def drive_point(self) -> complex:
        if self.geometry == CHORDAL:
            return complex(self.driving)
        return complex(math.cos(self.driving), math.sin(self.driving))

    @property
    def g(self) -> np.ndarray:
        return self.y[:, Y_G]

    @property
    def w(self) -> np.ndarray:
        """``g - xi`` (chordal) or ``g / zeta`` (radial)."""
        if self.geometry == CHORDAL:
            return self.y[:, Y_G] - self.driving
        return self.y[:, Y_G] * np.exp(-1j * self.driving)

    @property
    def log_w(self) -> np.ndarray:
        """Continuous ``log w`` in the radial geometry (``log(g - xi)`` principal in the chordal one)."""
        if self.geometry == CHORDAL:
            return np.log(self.w)
        return self.y[:, Y_LOG_G] - 1j * self.driving

    @property
    def tracked(self) -> list[dict]:
        return [
            {
                "z0": complex(self.z0[i]),
                "g": complex(self.y[i, Y_G]),
                "g1": complex(self.y[i, Y_G1]),
                "g2": complex(self.y[i, Y_G2]),
                "g3": complex(self.y[i, Y_G3]),
                "alive": bool(self.alive[i]),
                "tau": None if math.isnan(self.tau[i]) else float(self.tau[i]),
            }
            for i in range(self.n_force, len(self.z0))
        ]

    @property
    def force_points(self) -> list[dict]:
        return [{"q": complex(self.z0[k]), "image": complex(self.y[k, Y_G])} for k in range(self.n_force)]

    def index(self, z: complex) -> int:
        for i in range(self.n_force, len(self.z0)):
            if abs(self.z0[i] - z) <= 1e-12:
                return i
        raise KeyError(f"point {z} is not tracked")


def _on_boundary(geometry: int, z: complex) -> bool:
    if geometry == CHORDAL:
        return abs(z.imag) <= 1e-12
    return abs(abs(z) - 1.0) <= 1e-12



def _step(state: LoewnerState, next_drive: float, dt: float, geometry: int, sign: int) -> LoewnerState:
    if dt < 0:
        raise ValueError("dt must be non-negative")
    if state.geometry != geometry or state.sign != sign:
        raise ValueError("state geometry/direction does not match the step")
    out = state.copy()
    if dt == 0:
        return out
    _step_all(
        geometry, sign, out.y, out.boundary, out.alive, out.tau, out.t, out.driving, float(next_drive),
        float(dt), C_SUB, EPS_SWALLOW, DT_MIN, out.status,
    )
    if sign < 0 and np.any((out.status == DT_FLOOR) & ~out.boundary):
        raise LoewnerError("backward flow reached the step-size floor near the pole")
    out.t = state.t + dt
    out.driving = float(next_drive)
    return out


def step_chordal(state: LoewnerState, xi_next: float, dt: float) -> LoewnerState:
    """Forward chordal step ``dg/dt = 2/(g - xi)``."""
    return _step(state, xi_next, dt, CHORDAL, 1)


def step_radial(state: LoewnerState, theta_next: float, dt: float) -> LoewnerState:
    """Forward radial step ``dg/dt = g (zeta + g)/(zeta - g)``, ``zeta = e^{i theta}``."""
    return _step(state, theta_next, dt, RADIAL, 1)


def step_backward(state: LoewnerState, driving_next: float, dt: float, geometry: int | str) -> LoewnerState:
    """Backward step with the sign-flipped vector field."""
    geom = _geom_code(geometry)
    return _step(state, driving_next, dt, geom, -1)


def swallow_time(state: LoewnerState, z: complex) -> float | None:
    i = state.index(z)
    return None if math.isnan(state.tau[i]) else float(state.tau[i])


def _geom_code(geometry: int | str) -> int:
    if isinstance(geometry, (int, np.integer)):
        return int(geometry)
    return {"chordal": CHORDAL, "radial": RADIAL}[str(geometry).lower()]


def evolve(
    state: LoewnerState, driving: np.ndarray, dt: float
) -> LoewnerState:
    """Run a whole driving series (``driving[0]`` must equal the current value)."""
    if abs(driving[0] - state.driving) > 1e-12:
        raise ValueError("driving series must start at the current driving value")
    s = state
    for d in driving[1:]:
        s = _step(s, float(d), dt, s.geometry, s.sign)
    return s


def write_path_csv(path: str | Path, times: np.ndarray, driving: np.ndarray, rec_y: np.ndarray,
                   rec_alive: np.ndarray, labels: Sequence[str] | None = None,
                   extra: Mapping[str, np.ndarray] | None = None) -> None:
    """Path dump: ``t, driving`` then ``g_re, g_im, g1_re, g1_im, alive`` per point.

    ``extra`` columns (one value per row) are appended after the point
    columns; complex series are split into ``_re`` and ``_im`` columns.
    """
    n_pts = rec_y.shape[1]
    labels = list(labels) if labels is not None else [f"p{i}" for i in range(n_pts)]
    header = ["t", "driving"]
    for lab in labels:
        header += [f"{lab}_g_re", f"{lab}_g_im", f"{lab}_g1_re", f"{lab}_g1_im", f"{lab}_alive"]
    cols: list[np.ndarray] = []
    for name, series in (extra or {}).items():
        series = np.asarray(series)
        if len(series) != len(times):
            raise ValueError(f"extra column {name!r} has {len(series)} rows, expected {len(times)}")
        if np.iscomplexobj(series):
            header += [f"{name}_re", f"{name}_im"]
            cols += [series.real, series.imag]
        else:
            header.append(name)
            cols.append(series)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for r in range(len(times)):
            row: list = [repr(float(times[r])), repr(float(driving[r]))]
            for i in range(n_pts):
                g = rec_y[r, i, Y_G]
                g1 = rec_y[r, i, Y_G1]
                row += [repr(float(g.real)), repr(float(g.imag)), repr(float(g1.real)), repr(float(g1.imag)),
                        int(rec_alive[r, i])]
            row += [repr(float(c[r])) for c in cols]
            wr.writerow(row)
