"""Driving processes for SLE[beta] and batch path simulation.

Every path draws its Brownian increments from its own counter-based stream,
``Philox(SeedSequence([seed, path_index]))``, so a path is reproducible on
its own and batches can be split across threads in any way.
"""

from __future__ import annotations

import cmath
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from . import loewner as lw
from .charges import Divisor, Point, Side
from .partition import (
    Geometry,
    Mode,
    SleParams,
    drift_chordal,
    drift_radial,
    rho_background_chordal,
    rho_background_radial,
)


class DriftMode(str, Enum):
    STANDARD = "standard"
    RHO_SUM = "rho_sum"
    PARTITION_GRADIENT = "partition_gradient"


class ForcePointSwallowed(RuntimeError):
    """A force point reached the driving point; the path was truncated."""


@dataclass
class DrivingConfig:
    """Driving-process configuration.

    ``force_points`` are real positions (chordal) or angles (radial).  In
    ``partition_gradient`` mode the drift is ``kappa d log Z`` for ``beta``;
    when ``beta`` is omitted it is induced from ``rho``/``eta``.

    With ``refine`` set, a step is bisected with Brownian-bridge midpoints
    while a tracked point lies within ``refine_k * sqrt(kappa * h)`` of the
    driving segment, so hits inside a step are not missed.
    """

    params: SleParams
    geometry: Geometry = Geometry.CHORDAL
    drift_mode: DriftMode = DriftMode.STANDARD
    seed: int = 0
    dt: float = 1e-4
    t_end: float = 1.0
    force_points: Sequence[float] = ()
    rho: Sequence[float] = ()
    eta: float = 0.0
    drive0: float = 0.0
    beta: Divisor | None = None
    noise: bool = True
    refine: bool = True
    refine_k: float = lw.K_REFINE

    def __post_init__(self) -> None:
        self.geometry = Geometry(self.geometry)
        self.drift_mode = DriftMode(self.drift_mode)
        if self.dt <= 0 or self.t_end < 0:
            raise ValueError("dt must be positive and t_end non-negative")
        if len(self.force_points) != len(self.rho):
            raise ValueError("one rho per force point")
        if self.drift_mode is DriftMode.STANDARD and (self.force_points or self.eta):
            raise ValueError("standard mode takes no force points and no eta")
        if self.drift_mode is DriftMode.PARTITION_GRADIENT and self.refine:
            raise ValueError("partition_gradient paths run on the plain step grid; set refine=False")
        if self.refine_k <= 0:
            raise ValueError("refine_k must be positive")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    @property
    def backward(self) -> bool:
        return self.params.mode is Mode.BACKWARD

    def induced_beta(self) -> Divisor:
        """Full background charge, seed included, matching the rho description."""
        if self.beta is not None:
            return self.beta
        p = self.params
        if self.geometry is Geometry.CHORDAL:
            bg = rho_background_chordal(p, list(self.force_points), list(self.rho))
            seed = Point(complex(self.drive0), False, Side.BOUNDARY)
        else:
            bg = rho_background_radial(p, list(self.force_points), list(self.rho), self.eta)
            seed = Point(cmath.exp(1j * self.drive0), False, Side.BOUNDARY)
        return bg + Divisor(((seed, complex(p.a)),), p.b)

    def force_coords(self) -> list[complex]:
        if self.geometry is Geometry.CHORDAL:
            return [complex(q) for q in self.force_points]
        return [cmath.exp(1j * th) for th in self.force_points]


def path_normals(seed: int, path_index: int, n_steps: int) -> np.ndarray:
    """Standard normal increments of one path from its own Philox stream."""
    ss = np.random.SeedSequence([int(seed) & (2**64 - 1), int(path_index)])
    return np.random.Generator(np.random.Philox(ss)).standard_normal(n_steps)


def bridge_seed(seed: int, path_index: int) -> int:
    """32-bit seed of the Brownian-bridge refinement stream of one path."""
    ss = np.random.SeedSequence([int(seed) & (2**64 - 1), int(path_index), 1])
    return int(ss.generate_state(1, np.uint32)[0])


def _kernel_opts(cfg: DrivingConfig, path_index: int) -> tuple[float, float, float, float, int]:
    k_ref = float(cfg.refine_k) if cfg.refine and cfg.noise else 0.0
    return lw.EPS_KERNEL, lw.C_SUB, lw.DT_MIN_KERNEL, k_ref, bridge_seed(cfg.seed, path_index)


@dataclass
class PathResult:
    """One simulated path sampled at every step."""

    times: np.ndarray
    driving: np.ndarray
    force: np.ndarray
    y: np.ndarray
    alive: np.ndarray
    tau: np.ndarray
    truncated: bool
    n_force: int
    z0: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=complex))

    def state_at(self, step: int, geometry: Geometry, backward: bool) -> lw.LoewnerState:
        """Rebuild a :class:`LoewnerState` for a recorded step."""
        geom = lw.RADIAL if geometry is Geometry.RADIAL else lw.CHORDAL
        st = lw.LoewnerState.new(self.z0[self.n_force:], geometry=geom, backward=backward,
                                 driving=float(self.driving[step]),
                                 force_points=self.z0[: self.n_force])
        st.y = self.y[step].copy()
        st.alive = self.alive[step].copy()
        st.t = float(self.times[step])
        st.tau = np.where(self.tau <= st.t, self.tau, np.nan)
        return st


def _initial_y(geom: int, pts: Sequence[complex]) -> tuple[np.ndarray, np.ndarray]:
    st = lw.LoewnerState.new(pts, geometry=geom)
    return st.y, st.boundary


def _geom(cfg: DrivingConfig) -> int:
    return lw.RADIAL if cfg.geometry is Geometry.RADIAL else lw.CHORDAL


def _background_now(cfg: DrivingConfig, tracked: dict[int, int], y: np.ndarray) -> Divisor:
    """Background charge (without the seed) moved to the current point images."""
    beta = cfg.induced_beta()
    chordal = cfg.geometry is Geometry.CHORDAL
    seed_coord = complex(cfg.drive0) if chordal else cmath.exp(1j * cfg.drive0)
    entries = []
    for idx, (p, c) in enumerate(beta.entries):
        if not p.at_infinity and abs(p.coord - seed_coord) <= 1e-12 and p.side is Side.BOUNDARY:
            continue
        if idx not in tracked:
            entries.append((p, c))
            continue
        g = complex(y[tracked[idx], lw.Y_G])
        if p.side is Side.REFLECTED:
            g = g.conjugate() if chordal else 1.0 / g.conjugate()
        entries.append((Point(g, False, p.side), c))
    return Divisor(tuple(entries), beta.b)


def _tracked_background(cfg: DrivingConfig) -> tuple[list[complex], dict[int, int]]:
    """Points of ``beta`` that move with the flow; reflected points follow their mirror."""
    beta = cfg.induced_beta()
    chordal = cfg.geometry is Geometry.CHORDAL
    seed_coord = complex(cfg.drive0) if chordal else cmath.exp(1j * cfg.drive0)
    coords: list[complex] = []
    mapping: dict[int, int] = {}
    for idx, (p, _) in enumerate(beta.entries):
        if p.at_infinity or (not chordal and p.coord == 0):
            continue
        if p.side is Side.BOUNDARY and abs(p.coord - seed_coord) <= 1e-12:
            continue
        z = p.coord
        if p.side is Side.REFLECTED:
            z = z.conjugate() if chordal else 1.0 / z.conjugate()
        for j, c in enumerate(coords):
            if abs(c - z) <= 1e-12:
                mapping[idx] = j
                break
        else:
            mapping[idx] = len(coords)
            coords.append(z)
    return coords, mapping


def generate_path(
    cfg: DrivingConfig,
    points: Sequence[complex] = (),
    path_index: int = 0,
    normals: np.ndarray | None = None,
) -> PathResult:
    """Simulate one path, recording the driving, force points and tracked points at every step."""
    geom = _geom(cfg)
    sign = -1 if cfg.backward else 1
    n = cfg.n_steps
    if normals is None:
        normals = path_normals(cfg.seed, path_index, n)
    if not cfg.noise:
        normals = np.zeros(n)
    if cfg.drift_mode is DriftMode.PARTITION_GRADIENT:
        return _generate_partition(cfg, points, normals)
    force = cfg.force_coords()
    pts = force + [complex(z) for z in points]
    y0, boundary = _initial_y(geom, pts)
    n_pts = len(pts)
    rec_steps = np.arange(n + 1, dtype=np.int64)
    out = _alloc(n + 1, n_pts)
    drive_out = np.empty(n + 1)
    eps, c_sub, dt_min, k_ref, bseed = _kernel_opts(cfg, path_index)
    truncated = lw.run_path_kernel(
        geom, sign, cfg.params.kappa, normals, cfg.dt, cfg.drive0, y0, boundary,
        len(force), np.asarray(cfg.rho, dtype=float), float(cfg.eta), rec_steps,
        eps, 0.0, c_sub, dt_min, k_ref, bseed, *out, drive_out,
    )
    rec_y, _, _, rec_alive, tau, _, _ = out
    times = np.arange(n + 1) * cfg.dt
    return PathResult(times, drive_out, rec_y[:, : len(force), lw.Y_G].copy(), rec_y, rec_alive,
                      tau, bool(truncated), len(force), np.array(pts, dtype=complex))


def generate_backward_path(
    cfg: DrivingConfig, points: Sequence[complex] = (), path_index: int = 0,
    normals: np.ndarray | None = None,
) -> PathResult:
    """Same as :func:`generate_path` for a backward parameter set."""
    if not cfg.backward:
        raise ValueError("backward paths need SleParams.backward(...)")
    return generate_path(cfg, points, path_index, normals)


def _alloc(n_rec: int, n_pts: int) -> tuple[np.ndarray, ...]:
    return (
        np.zeros((n_rec, n_pts, lw.NY), dtype=complex),
        np.zeros((n_rec, n_pts)),
        np.zeros((n_rec, n_pts)),
        np.zeros((n_rec, n_pts), dtype=bool),
        np.zeros(n_pts),
        np.zeros(n_pts, dtype=np.int64),
        np.zeros(n_pts),
    )


def _generate_partition(cfg: DrivingConfig, points: Sequence[complex], normals: np.ndarray) -> PathResult:
    """Python-level loop with the drift taken from the partition function."""
    geom = _geom(cfg)
    sign = -1 if cfg.backward else 1
    bg_pts, mapping = _tracked_background(cfg)
    n_force = len(bg_pts)
    pts = bg_pts + [complex(z) for z in points]
    y, boundary = _initial_y(geom, pts)
    n_pts = len(pts)
    n = cfg.n_steps
    alive = np.ones(n_pts, dtype=bool)
    tau = np.full(n_pts, np.nan)
    status = np.zeros(n_pts, dtype=np.int64)
    ys = np.zeros((n + 1, n_pts, lw.NY), dtype=complex)
    alives = np.zeros((n + 1, n_pts), dtype=bool)
    driving = np.empty(n + 1)
    ys[0] = y
    alives[0] = alive
    d = cfg.drive0
    driving[0] = d
    sq = math.sqrt(cfg.params.kappa * cfg.dt)
    truncated = False
    t = 0.0
    for k in range(n):
        if truncated:
            d_next = d
        else:
            bg = _background_now(cfg, mapping, y)
            if cfg.geometry is Geometry.CHORDAL:
                drift = drift_chordal(bg, d, cfg.params)
            else:
                drift = drift_radial(bg, d, cfg.params)
            d_next = d + drift * cfg.dt + sq * normals[k]
            lw._step_all(geom, sign, y, boundary, alive, tau, t, d, d_next, cfg.dt, lw.C_SUB,
                         lw.EPS_KERNEL, lw.DT_MIN_KERNEL, status)
            if not alive[:n_force].all():
                truncated = True
                alive[:] = False
        d = d_next
        t += cfg.dt
        driving[k + 1] = d
        ys[k + 1] = y
        alives[k + 1] = alive
    times = np.arange(n + 1) * cfg.dt
    return PathResult(times, driving, ys[:, :n_force, lw.Y_G].copy(), ys, alives, tau, truncated,
                      n_force, np.array(pts, dtype=complex))


# ---------------------------------------------------------------------------
# batches


@dataclass
class BatchResult:
    """Point data of many paths at a few recorded times.

    Arrays are indexed ``[path, record, point]``; frozen points keep the
    driving value and time at which they stopped.
    """

    rec_times: np.ndarray
    y: np.ndarray
    drive: np.ndarray
    time: np.ndarray
    alive: np.ndarray
    tau: np.ndarray
    min_dist: np.ndarray
    truncated: np.ndarray
    n_force: int
    z0: np.ndarray


def _rec_steps(rec_times: Sequence[float], dt: float) -> np.ndarray:
    steps = np.array([int(round(t / dt)) for t in rec_times], dtype=np.int64)
    if np.any(np.diff(steps) < 0):
        raise ValueError("record times must be non-decreasing")
    return steps


def simulate_batch(
    cfg: DrivingConfig,
    points: Sequence[complex],
    n_paths: int,
    rec_times: Sequence[float],
    *,
    r_stop: float = 0.0,
    threads: int = 1,
    path_offset: int = 0,
    chunk: int = 256,
    path_indices: Sequence[int] | None = None,
) -> BatchResult:
    """Simulate ``n_paths`` independent paths with the explicit (rho-sum) drift.

    ``path_indices`` (default ``path_offset + range(n_paths)``) selects the
    RNG streams, so any subset of a batch can be re-simulated exactly.
    """
    if cfg.drift_mode is DriftMode.PARTITION_GRADIENT:
        raise ValueError("batch simulation supports the standard and rho_sum drifts")
    geom = _geom(cfg)
    sign = -1 if cfg.backward else 1
    force = cfg.force_coords()
    pts = force + [complex(z) for z in points]
    y0, boundary = _initial_y(geom, pts)
    n_pts = len(pts)
    steps = _rec_steps(rec_times, cfg.dt)
    n_steps = int(steps.max()) if len(steps) else 0
    n_rec = len(steps)
    idx = np.arange(path_offset, path_offset + n_paths) if path_indices is None else np.asarray(path_indices)
    n_paths = len(idx)
    Y = np.zeros((n_paths, n_rec, n_pts, lw.NY), dtype=complex)
    D = np.zeros((n_paths, n_rec, n_pts))
    T = np.zeros((n_paths, n_rec, n_pts))
    A = np.zeros((n_paths, n_rec, n_pts), dtype=bool)
    TAU = np.zeros((n_paths, n_pts))
    MIN = np.zeros((n_paths, n_pts))
    TR = np.zeros(n_paths, dtype=bool)
    rho = np.asarray(cfg.rho, dtype=float)
    empty = np.empty(0)

    def work(lo: int, hi: int) -> None:
        status = np.zeros(n_pts, dtype=np.int64)
        for p in range(lo, hi):
            normals = path_normals(cfg.seed, int(idx[p]), n_steps) if cfg.noise else np.zeros(n_steps)
            eps, c_sub, dt_min, k_ref, bseed = _kernel_opts(cfg, int(idx[p]))
            TR[p] = lw.run_path_kernel(
                geom, sign, cfg.params.kappa, normals, cfg.dt, cfg.drive0, y0, boundary,
                len(force), rho, float(cfg.eta), steps, eps, float(r_stop), c_sub,
                dt_min, k_ref, bseed, Y[p], D[p], T[p], A[p], TAU[p], status, MIN[p], empty,
            )

    bounds = [(lo, min(lo + chunk, n_paths)) for lo in range(0, n_paths, chunk)]
    if threads <= 1:
        for lo, hi in bounds:
            work(lo, hi)
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            list(ex.map(lambda b: work(*b), bounds))
    return BatchResult(np.asarray(rec_times, dtype=float), Y, D, T, A, TAU, MIN, TR, len(force),
                       np.array(pts, dtype=complex))
