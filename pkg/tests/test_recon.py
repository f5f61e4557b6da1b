import numpy as np
import pytest

from oasim import _kernels
from oasim.forward import PhysicsConfig, SignalMatrix, point_source, simulate_signals, spherical_mean_operator
from oasim.geometry import ChannelMask, limited_view_mask, sparse_mask
from oasim.metrics import second_moment_ellipse
from oasim.recon import (
    NumericContractError, ReconConfig, apply_channel_mask, backproject, bandpass, bandpass_response, delay_sum,
    normalize_clip, reconstruct, signal_time_derivative, to_uint8,
)

BACKENDS = ["numpy"] + (["numba"] if _kernels.HAVE_NUMBA else [])


def _sig(values, fs=40e6):
    return SignalMatrix(np.asarray(values, dtype=np.float64), PhysicsConfig(sampling_rate=fs, n_samples=len(values)))


def test_bandpass_response_shape():
    f = np.array([0, 0.44e6, 0.45e6, 0.475e6, 0.5e6, 4e6, 8e6, 8.4e6, 8.8e6, 9e6])
    h = bandpass_response(f, 0.5e6, 8e6)
    np.testing.assert_allclose(h, [0, 0, 0, 0.5, 1, 1, 1, 0.5, 0, 0], atol=1e-12)


def test_bandpass_passes_inband_sine_and_removes_dc():
    n, fs = 2000, 40e6
    t = np.arange(n) / fs
    tone = np.sin(2 * np.pi * 2e6 * t)  # 100 whole periods: exactly on a bin
    x = np.stack([tone + 3.0, 2 * tone], axis=1)
    y = bandpass(_sig(x), 0.5e6, 8e6).values
    np.testing.assert_allclose(y[:, 0], tone, atol=1e-10)
    np.testing.assert_allclose(y[:, 1], 2 * tone, atol=1e-10)
    hf = np.sin(2 * np.pi * 12e6 * t)
    assert np.abs(bandpass(_sig(hf[:, None]), 0.5e6, 8e6).values).max() < 1e-10
    assert not bandpass(_sig(np.zeros((64, 3))), 0.5e6, 8e6).values.any()


def test_bandpass_rejects_bad_band():
    with pytest.raises(ValueError):
        bandpass(_sig(np.zeros((64, 1))), 1e6, 30e6)
    with pytest.raises(ValueError):
        bandpass(_sig(np.zeros((64, 1))), 5e6, 1e6)


def test_signal_derivative():
    fs = 10.0
    n = 50
    ramp = np.arange(n, dtype=float)[:, None] * 0.5
    np.testing.assert_allclose(signal_time_derivative(_sig(ramp, fs)).values, 5.0)
    t = np.arange(n) / fs
    s = np.sin(0.3 * t)[:, None]
    d = signal_time_derivative(_sig(s, fs)).values
    np.testing.assert_allclose(d[1:-1, 0], 0.3 * np.cos(0.3 * t[1:-1]), atol=1e-3)


def test_apply_channel_mask(ms, rng):
    v = rng.standard_normal((20, 256))
    s = _sig(v)
    m = sparse_mask(ms, 64)
    out = apply_channel_mask(s, m).values
    np.testing.assert_array_equal(out[:, m.active], v[:, m.active])
    assert not out[:, ~m.active].any()
    full = ChannelMask(np.ones(256, bool), "full")
    np.testing.assert_array_equal(apply_channel_mask(s, full).values, v)
    # idempotent
    np.testing.assert_array_equal(apply_channel_mask(apply_channel_mask(s, m), m).values, out)
    with pytest.raises(ValueError):
        apply_channel_mask(s, ChannelMask(np.ones(10, bool), "short"))


@pytest.mark.parametrize("backend", BACKENDS)
def test_delay_sum_matched_filter(backend, vc, small_grid, physics):
    img = point_source(small_grid, 0.6e-3, 1.2e-3)
    sm = spherical_mean_operator(img, vc, physics, small_grid)
    out = delay_sum(sm, vc, ReconConfig(small_grid, "delay_sum", adjoint_weights=True), backend)
    assert np.unravel_index(np.argmax(out), out.shape) == small_grid.pixel_of(0.6e-3, 1.2e-3)


def test_all_off_mask_gives_zero(vc, small_grid, physics, rng):
    sig = simulate_signals(rng.random((48, 48)), vc, physics, small_grid)
    off = ChannelMask(np.zeros(1024, bool), "off")
    for mode in ("delay_sum", "derivative_bp"):
        assert not reconstruct(sig, vc, ReconConfig(small_grid, mode, mask=off)).any()


@pytest.mark.parametrize("mode", ["delay_sum", "derivative_bp"])
def test_mask_commutes(mode, vc, small_grid, physics, rng):
    sig = simulate_signals(rng.random((48, 48)), vc, physics, small_grid)
    m = sparse_mask(vc, 64)
    a = reconstruct(sig, vc, ReconConfig(small_grid, mode, mask=m))
    b = reconstruct(apply_channel_mask(sig, m), vc, ReconConfig(small_grid, mode))
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12 * np.abs(a).max())


@pytest.mark.parametrize("backend", BACKENDS)
def test_backproject_round_trip(backend, vc, small_grid, physics):
    x, y = -1.4e-3, 0.8e-3
    img = point_source(small_grid, x, y)
    sig = simulate_signals(img, vc, physics, small_grid, backend)
    out = backproject(sig, vc, ReconConfig(small_grid), backend)
    r, c = np.unravel_index(np.argmax(out), out.shape)
    tr, tc = small_grid.pixel_of(x, y)
    assert abs(r - tr) <= 1 and abs(c - tc) <= 1


@pytest.mark.parametrize("backend", BACKENDS)
def test_adjoint_identity_small(backend, ms, small_grid, physics, rng):
    x = rng.standard_normal((48, 48))
    y = rng.standard_normal((physics.n_samples, ms.n_elements))
    ax = spherical_mean_operator(x, ms, physics, small_grid, backend).values
    aty = delay_sum(SignalMatrix(y, physics, ms), ms,
                    ReconConfig(small_grid, "delay_sum", adjoint_weights=True), backend)
    lhs, rhs = float(np.vdot(ax, y)), float(np.vdot(x, aty))
    assert abs(lhs - rhs) / max(abs(lhs), abs(rhs)) < 1e-10


@pytest.mark.skipif(not _kernels.HAVE_NUMBA, reason="numba unavailable")
def test_backends_agree(vc, small_grid, physics, rng):
    sig = simulate_signals(rng.random((48, 48)), vc, physics, small_grid)
    cfg = ReconConfig(small_grid, band=(0.5e6, 8e6), mask=limited_view_mask(vc, 256))
    a = reconstruct(sig, vc, cfg, "numpy")
    b = reconstruct(sig, vc, cfg, "numba")
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12 * np.abs(a).max())


def test_limited_view_elongates_across_view(vc, grid, physics):
    img = point_source(grid, 2e-3, -1e-3)
    sig = simulate_signals(img, vc, physics, grid)
    cfg = ReconConfig(grid, "derivative_bp", band=(0.5e6, 8e6), mask=limited_view_mask(vc, 128))
    out = reconstruct(sig, vc, cfg)
    ratio, axis = second_moment_ellipse(out)
    assert ratio > 1.5
    # the view is centered on +y, so the blur runs along x
    assert abs(axis[0]) > np.cos(np.radians(15))


def test_reconstruct_checks_channels(vc, ms, small_grid, physics):
    with pytest.raises(ValueError):
        reconstruct(SignalMatrix(np.zeros((physics.n_samples, 256)), physics), vc, ReconConfig(small_grid))
    with pytest.raises(ValueError):
        ReconConfig(small_grid, mode="fbp")


def test_normalize_clip_examples():
    out = normalize_clip(np.array([[2.0, -1.0], [1.0, 0.0]]))
    np.testing.assert_array_equal(out, [[1.0, -0.2], [0.5, 0.0]])
    out = normalize_clip(np.array([0.5, -0.05]))
    np.testing.assert_array_equal(out, [1.0, -0.1])
    with pytest.raises(NumericContractError):
        normalize_clip(np.array([-1.0, 0.0]))
    with pytest.raises(NumericContractError):
        normalize_clip(np.array([np.nan, 1.0]))


def test_normalize_clip_properties(rng):
    for _ in range(50):
        img = rng.standard_normal((16, 16)) * rng.uniform(0.01, 100)
        img.flat[rng.integers(img.size)] = abs(img).max() + 0.1
        out = normalize_clip(img)
        assert out.max() == 1.0 and out.min() >= -0.2
        np.testing.assert_array_equal(normalize_clip(out), out)


def test_to_uint8():
    np.testing.assert_array_equal(to_uint8(np.array([-0.2, 1.0, 0.4])), [0, 255, 128])
