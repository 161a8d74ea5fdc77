import math

import numpy as np
import pytest

from slelab import loewner as lw
from slelab.driver import (
    DriftMode,
    DrivingConfig,
    generate_backward_path,
    generate_path,
    path_normals,
    simulate_batch,
)
from slelab.partition import Geometry, SleParams, rho_background_chordal


def test_same_seed_is_bit_identical():
    cfg = DrivingConfig(SleParams.forward(4.0), seed=42, dt=1e-3, t_end=0.2)
    a = generate_path(cfg, [1j, 0.5 + 0.5j], path_index=3)
    b = generate_path(cfg, [1j, 0.5 + 0.5j], path_index=3)
    assert np.array_equal(a.driving, b.driving)
    assert np.array_equal(a.y, b.y)
    c = generate_path(cfg, [1j, 0.5 + 0.5j], path_index=4)
    assert not np.array_equal(a.driving, c.driving)


@pytest.mark.parametrize("kappa", [2.0, 8 / 3, 6.0])
def test_standard_driving_is_scaled_brownian_motion(kappa):
    cfg = DrivingConfig(SleParams.forward(kappa), seed=9, dt=1e-3, t_end=0.5)
    path = generate_path(cfg, [1j], 0)
    expected = np.r_[0.0, np.cumsum(math.sqrt(kappa * cfg.dt) * path_normals(9, 0, cfg.n_steps))]
    assert np.allclose(path.driving, expected, atol=1e-12, rtol=0)


def test_increment_variance():
    cfg = DrivingConfig(SleParams.forward(3.0), seed=1, dt=1e-5, t_end=1.0)
    path = generate_path(cfg, [], 0)
    inc = np.diff(path.driving) / math.sqrt(3.0)
    assert len(inc) == 100_000
    assert abs(inc.var() / cfg.dt - 1) < 0.01


def test_zero_noise_is_deterministic():
    cfg = DrivingConfig(SleParams.forward(4.0), seed=1, dt=1e-3, t_end=1.0, noise=False)
    path = generate_path(cfg, [1 + 1j], 0)
    assert np.all(path.driving == 0)
    z = 1 + 1j
    assert abs(path.y[-1, 0, lw.Y_G] - np.sqrt(z * z + 4)) < 1e-9


def test_zero_noise_backward_matches_ode():
    cfg = DrivingConfig(SleParams.backward(4.0), seed=1, dt=1e-3, t_end=0.5, noise=False)
    path = generate_backward_path(cfg, [3 + 3j], 0)
    exact = np.sqrt((3 + 3j) ** 2 - 2.0)
    assert abs(path.y[-1, 0, lw.Y_G] - exact) < 1e-9
    with pytest.raises(ValueError):
        generate_backward_path(DrivingConfig(SleParams.forward(4.0)), [1j])


@pytest.mark.parametrize("backward", [False, True])
def test_standard_backward_has_no_drift(backward):
    p = SleParams.backward(4.0) if backward else SleParams.forward(4.0)
    cfg = DrivingConfig(p, seed=2, dt=1e-3, t_end=0.1)
    path = generate_path(cfg, [], 0)
    assert np.allclose(path.driving[1:], 2 * math.sqrt(1e-3) * np.cumsum(path_normals(2, 0, 100)), atol=1e-12)


@pytest.mark.parametrize("geometry, q", [(Geometry.CHORDAL, 1.5), (Geometry.RADIAL, 2.0)])
def test_force_points_stay_on_boundary(geometry, q):
    cfg = DrivingConfig(SleParams.forward(4.0), geometry, DriftMode.RHO_SUM, seed=4, dt=1e-3, t_end=0.5,
                        force_points=[q], rho=[1.0])
    path = generate_path(cfg, [0.3j], 0)
    f = path.force[:, 0]
    if geometry is Geometry.CHORDAL:
        assert np.max(np.abs(f.imag)) <= 1e-10
    else:
        assert np.max(np.abs(np.abs(f) - 1)) <= 1e-10


def test_attracting_force_point_truncates():
    cfg = DrivingConfig(SleParams.forward(4.0), Geometry.CHORDAL, DriftMode.RHO_SUM, seed=1, dt=1e-3, t_end=1.0,
                        force_points=[0.05], rho=[-1.9])
    path = generate_path(cfg, [1j], 0)
    assert path.truncated
    k = int(np.argmin(path.alive[:, 0]))
    assert not path.alive[k:, 1].any()


@pytest.mark.parametrize("geometry, qs, rho, eta", [
    (Geometry.CHORDAL, [1.0, -2.0], [0.8, 0.5], 0.0),
    (Geometry.RADIAL, [2.0], [0.7], 0.4),
    (Geometry.RADIAL, [1.0, 4.0], [0.5, -0.3], -0.2),
])
def test_rho_sum_matches_partition_gradient(geometry, qs, rho, eta):
    common = dict(seed=3, dt=1e-3, t_end=0.3, force_points=qs, rho=rho, eta=eta, refine=False)
    a = generate_path(DrivingConfig(SleParams.forward(4.0), geometry, DriftMode.RHO_SUM, **common), [0.3j], 0)
    b = generate_path(DrivingConfig(SleParams.forward(4.0), geometry, DriftMode.PARTITION_GRADIENT, **common),
                      [0.3j], 0)
    assert not a.truncated
    assert np.max(np.abs(np.diff(a.driving) - np.diff(b.driving))) < 1e-9


def test_induced_background_matches_rho():
    p = SleParams.forward(6.0)
    cfg = DrivingConfig(p, Geometry.CHORDAL, DriftMode.RHO_SUM, force_points=[1.0, 2.0], rho=[0.3, -0.6])
    beta = cfg.induced_beta()
    expected = rho_background_chordal(p, [1.0, 2.0], [0.3, -0.6])
    for pt, c in expected.entries:
        assert beta.charge_at(pt) == pytest.approx(c)
    for (pt, c), r in zip(beta.entries, [0.3, -0.6]):
        assert c * math.sqrt(2 * 6.0) == pytest.approx(r)


def test_config_validation():
    p = SleParams.forward(4.0)
    with pytest.raises(ValueError):
        DrivingConfig(p, dt=0.0)
    with pytest.raises(ValueError):
        DrivingConfig(p, drift_mode=DriftMode.RHO_SUM, force_points=[1.0], rho=[])
    with pytest.raises(ValueError):
        DrivingConfig(p, force_points=[1.0], rho=[1.0])
    with pytest.raises(ValueError):
        DrivingConfig(p, drift_mode=DriftMode.PARTITION_GRADIENT)
    with pytest.raises(ValueError):
        DrivingConfig(p, refine_k=0.0)


def test_euler_maruyama_self_convergence():
    p = SleParams.backward(2.0)
    T, n_fine = 0.2, 1280
    levels = (20, 40, 80, 160)
    sq = np.zeros(len(levels))
    for k in range(20):
        fine = path_normals(5, k, n_fine)

        def run(n: int):
            m = n_fine // n
            normals = fine.reshape(n, m).sum(axis=1) / math.sqrt(m)
            cfg = DrivingConfig(p, Geometry.CHORDAL, DriftMode.RHO_SUM, seed=5, dt=T / n, t_end=T,
                                force_points=[2.0], rho=[2.0], refine=False)
            return generate_path(cfg, [0.5 + 1j], 0, normals=normals)

        ref = run(n_fine)
        assert not ref.truncated
        for i, n in enumerate(levels):
            sq[i] += (run(n).driving[-1] - ref.driving[-1]) ** 2
    rms = np.sqrt(sq / 20)
    slope = np.polyfit(np.log(T / np.array(levels)), np.log(rms), 1)[0]
    assert slope > 0.4


def test_batch_matches_single_paths():
    cfg = DrivingConfig(SleParams.forward(4.0), seed=11, dt=1e-3, t_end=0.2)
    batch = simulate_batch(cfg, [1j], 4, [0.1, 0.2])
    for k in range(4):
        path = generate_path(cfg, [1j], k)
        assert batch.y[k, 1, 0, lw.Y_G] == pytest.approx(path.y[200, 0, lw.Y_G], abs=1e-12)
    sub = simulate_batch(cfg, [1j], 2, [0.1, 0.2], path_indices=[3, 1])
    assert np.array_equal(sub.y[0], batch.y[3])
    assert np.array_equal(sub.y[1], batch.y[1])
    threaded = simulate_batch(cfg, [1j], 4, [0.1, 0.2], threads=2, chunk=1)
    assert np.array_equal(threaded.y, batch.y)
