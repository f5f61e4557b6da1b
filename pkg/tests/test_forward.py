import math
import os
import subprocess
import sys

import numpy as np
import pytest

from oasim import _kernels
from oasim.forward import (
    ImageGrid, PhysicsConfig, TimeWindowError, check_time_window, point_source, simulate_signals,
    spherical_mean_operator, time_derivative, tof_table,
)
from oasim.geometry import make_array

BACKENDS = ["numpy"] + (["numba"] if _kernels.HAVE_NUMBA else [])


def test_tof_example(vc, grid, physics):
    t = tof_table(vc, grid, physics)
    assert t.shape == (1024, 256, 256)
    # element 512 sits at (0, 40 mm); pixel (128, 128) is the origin
    assert t[512, 128, 128] == pytest.approx(0.04 * 40e6 / 1510, abs=1e-9)
    assert t[512, 128, 128] == pytest.approx(1059.6026, abs=1e-4)
    assert np.all(t >= 0)


def test_tof_zero_on_coincident_pixel():
    g = make_array("semi_circle")
    # a grid whose origin pixel lands on element 0
    grid = ImageGrid(16, 1e-4, origin=tuple(g.positions[0]))
    physics = PhysicsConfig(n_samples=2200)
    t = tof_table(g, grid, physics)
    assert t[0, 8, 8] == 0.0


def test_tof_scales_with_sampling_rate(small_grid):
    g = make_array("semi_circle")
    a = tof_table(g, small_grid, PhysicsConfig(sampling_rate=20e6, n_samples=1100))
    b = tof_table(g, small_grid, PhysicsConfig(sampling_rate=40e6, n_samples=2200))
    np.testing.assert_allclose(b, 2 * a, rtol=1e-14)


def test_time_window_error(vc):
    with pytest.raises(TimeWindowError, match="mm"):
        check_time_window(vc, ImageGrid(256, 1e-4), PhysicsConfig(n_samples=1000))
    # 256 px @ 0.1 mm fits into 2030 samples
    dmax = check_time_window(vc, ImageGrid(), PhysicsConfig())
    assert dmax < 2029 * 1510 / 40e6


def test_physics_validation():
    with pytest.raises(ValueError):
        PhysicsConfig(speed_of_sound=0)
    with pytest.raises(ValueError):
        PhysicsConfig(n_samples=1)
    with pytest.raises(ValueError):
        ImageGrid(pitch_m=-1)


def test_zero_map_gives_zero(vc, small_grid, physics):
    s = simulate_signals(np.zeros((48, 48)), vc, physics, small_grid)
    assert s.values.shape == (2030, 1024)
    assert not s.values.any()


def test_shape_mismatch(vc, small_grid, physics):
    with pytest.raises(ValueError):
        simulate_signals(np.zeros((10, 10)), vc, physics, small_grid)


@pytest.mark.parametrize("backend", BACKENDS)
def test_impulse_closed_form(backend, ms, small_grid, physics):
    img = point_source(small_grid, 1.3e-3, -0.7e-3, 2.0)
    r, c = small_grid.pixel_of(1.3e-3, -0.7e-3)
    x, y = small_grid.xs[c], small_grid.ys[r]
    sig = simulate_signals(img, ms, physics, small_grid, backend).values
    scale = 1.0 / (4 * math.pi * physics.speed_of_sound) * physics.sampling_rate
    for i in (0, 100, 255):
        d = math.hypot(ms.positions[i, 0] - x, ms.positions[i, 1] - y)
        t = d * physics.sampling_rate / physics.speed_of_sound
        f, a = int(t), t - int(t)
        w = 2.0 / max(d, small_grid.pitch_m)
        expected = np.zeros(physics.n_samples)
        expected[f - 1] = (1 - a) / 2
        expected[f] = a / 2
        expected[f + 1] = -(1 - a) / 2
        expected[f + 2] = -a / 2
        np.testing.assert_allclose(sig[:, i], expected * scale * w, rtol=1e-12, atol=1e-18)
        # linear zero crossing between the two lobes lands on the time of flight
        cross = f + sig[f, i] / (sig[f, i] - sig[f + 1, i])
        assert cross == pytest.approx(t, abs=1e-9)


def test_stage_one_bins_sum_to_weight(vc, small_grid, physics):
    img = point_source(small_grid, -0.4e-3, 1.0e-3)
    sm = spherical_mean_operator(img, vc, physics, small_grid).values
    r, c = small_grid.pixel_of(-0.4e-3, 1.0e-3)
    d = np.hypot(vc.positions[:, 0] - small_grid.xs[c], vc.positions[:, 1] - small_grid.ys[r])
    np.testing.assert_allclose(sm.sum(axis=0), 1.0 / d, rtol=1e-12)
    assert np.all(np.count_nonzero(sm, axis=0) <= 2)


def test_linearity(ms, small_grid, physics, rng):
    a, b = rng.random((48, 48)), rng.random((48, 48))
    sa = simulate_signals(a, ms, physics, small_grid).values
    sb = simulate_signals(b, ms, physics, small_grid).values
    sab = simulate_signals(2.5 * a - b, ms, physics, small_grid).values
    np.testing.assert_allclose(sab, 2.5 * sa - sb, atol=1e-9 * np.abs(sab).max())


def test_grueneisen_scales_linearly(ms, small_grid, rng):
    a = rng.random((48, 48))
    s1 = simulate_signals(a, ms, PhysicsConfig(grueneisen=1.0), small_grid).values
    s3 = simulate_signals(a, ms, PhysicsConfig(grueneisen=3.0), small_grid).values
    np.testing.assert_allclose(s3, 3 * s1, rtol=1e-12)


def test_translation_consistency(physics):
    # same physical source described on two shifted grids gives the same signals
    g = make_array("linear")
    g0 = ImageGrid(32, 1e-4, (0.0, 0.0))
    g1 = ImageGrid(32, 1e-4, (0.3e-3, 0.0))
    a = np.zeros((32, 32))
    a[16, 19] = 1.0
    b = np.zeros((32, 32))
    b[16, 16] = 1.0
    s0 = simulate_signals(a, g, physics, g0).values
    s1 = simulate_signals(b, g, physics, g1).values
    np.testing.assert_allclose(s0, s1, rtol=0, atol=1e-9 * np.abs(s0).max())


def test_energy_locality(vc, small_grid, physics):
    img = point_source(small_grid, 0.0, 0.0)
    sig = simulate_signals(img, vc, physics, small_grid).values
    t0 = 0.04 * physics.samples_per_meter
    nz = np.flatnonzero(np.abs(sig).sum(axis=1))
    assert nz.min() >= int(t0) - 1 and nz.max() <= int(t0) + 2


@pytest.mark.skipif(not _kernels.HAVE_NUMBA, reason="numba unavailable")
def test_backends_agree(ms, small_grid, physics, rng):
    img = rng.random((48, 48))
    a = simulate_signals(img, ms, physics, small_grid, "numpy").values
    b = simulate_signals(img, ms, physics, small_grid, "numba").values
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12 * np.abs(a).max())


def test_time_derivative_examples():
    fs = 4.0
    ramp = np.arange(10.0)[:, None] * 3.0
    np.testing.assert_allclose(time_derivative(ramp, fs), 12.0)
    np.testing.assert_allclose(time_derivative(np.ones((5, 2)), fs), 0.0)
    with pytest.raises(ValueError):
        time_derivative(np.ones((2, 1)), fs)


def test_point_source_outside(small_grid):
    with pytest.raises(ValueError):
        point_source(small_grid, 1.0, 0.0)


def test_env_flag_forces_numpy():
    code = "from oasim import _kernels; print(_kernels.BACKEND, _kernels.HAVE_NUMBA)"
    env = dict(os.environ, OASIM_DISABLE_NUMBA="1")
    res = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert res.stdout.split() == ["numpy", "False"]
