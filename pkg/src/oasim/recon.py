"""Delay-and-sum and derivative backprojection."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import _kernels
from .forward import ImageGrid, SignalMatrix, check_time_window, time_derivative
from .geometry import ArrayGeometry, ChannelMask

DEFAULT_BAND = (0.5e6, 8e6)
MODES = ("delay_sum", "derivative_bp")


class NumericContractError(ArithmeticError):
    """An output violates a numeric guarantee (e.g. nothing to normalize)."""


@dataclass(frozen=True, eq=False)
class ReconConfig:
    grid: ImageGrid = ImageGrid()
    mode: str = "derivative_bp"
    band: tuple[float, float] | None = None
    mask: ChannelMask | None = None
    adjoint_weights: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown recon mode {self.mode!r}; expected one of {MODES}")
        if self.band is not None:
            lo, hi = self.band
            if not (0 <= lo < hi):
                raise ValueError(f"invalid band {self.band}")


def _check_band(low_hz, high_hz, fs):
    if not (0 <= low_hz < high_hz <= fs / 2):
        raise ValueError(f"band ({low_hz}, {high_hz}) Hz must satisfy 0 <= low < high <= fs/2 = {fs / 2}")


def bandpass_response(freqs: np.ndarray, low_hz: float, high_hz: float) -> np.ndarray:
    """Frequency mask: 1 on [low, high], raised-cosine tapers over 10% of
    each edge frequency just outside the band, 0 elsewhere."""
    f = np.abs(freqs)
    h = ((f >= low_hz) & (f <= high_hz)).astype(np.float64)
    if low_hz > 0:
        w = 0.1 * low_hz
        sel = (f >= low_hz - w) & (f < low_hz)
        h[sel] = 0.5 * (1 + np.cos(np.pi * (low_hz - f[sel]) / w))
    w = 0.1 * high_hz
    sel = (f > high_hz) & (f <= high_hz + w)
    h[sel] = 0.5 * (1 + np.cos(np.pi * (f[sel] - high_hz) / w))
    return h


def bandpass(signals: SignalMatrix, low_hz: float, high_hz: float) -> SignalMatrix:
    """Zero-phase FFT bandpass along time, length preserved."""
    fs = signals.physics.sampling_rate
    _check_band(low_hz, high_hz, fs)
    v = np.asarray(signals.values, dtype=np.float64)
    n = v.shape[0]
    spec = np.fft.rfft(v, axis=0)
    h = bandpass_response(np.fft.rfftfreq(n, 1.0 / fs), low_hz, high_hz)
    out = np.fft.irfft(spec * h[:, None], n=n, axis=0)
    return replace(signals, values=out)


def signal_time_derivative(signals: SignalMatrix) -> SignalMatrix:
    return replace(signals, values=time_derivative(np.asarray(signals.values, dtype=np.float64),
                                                   signals.physics.sampling_rate))


def apply_channel_mask(signals: SignalMatrix, mask: ChannelMask) -> SignalMatrix:
    """Zero the inactive columns; active columns are copied untouched."""
    if mask.active.shape[0] != signals.values.shape[1]:
        raise ValueError(f"mask length {mask.active.shape[0]} != {signals.values.shape[1]} channels")
    out = np.zeros_like(signals.values)
    out[:, mask.active] = signals.values[:, mask.active]
    return replace(signals, values=out)


def _active(signals: SignalMatrix, geom: ArrayGeometry, mask: ChannelMask | None) -> np.ndarray:
    n_el = signals.values.shape[1]
    if n_el != geom.n_elements:
        raise ValueError(f"signals have {n_el} channels but {geom.name} has {geom.n_elements} elements")
    if mask is None:
        return np.arange(n_el, dtype=np.int64)
    if mask.active.shape[0] != n_el:
        raise ValueError(f"mask length {mask.active.shape[0]} != {n_el} elements")
    return mask.indices.astype(np.int64)


def _run(signals, geom, config, deriv, backend):
    physics = signals.physics
    check_time_window(geom, config.grid, physics)
    active = _active(signals, geom, config.mask)
    if config.band is not None:
        signals = bandpass(signals, *config.band)
    sig_t = np.ascontiguousarray(np.asarray(signals.values, dtype=np.float64).T)
    dsig_t = None
    if deriv:
        dsig_t = np.ascontiguousarray(signal_time_derivative(signals).values.T)
    p = np.asarray(geom.positions, dtype=np.float64)
    g = config.grid
    return _kernels.gather(sig_t, dsig_t, p[:, 0].copy(), p[:, 1].copy(), active,
                           g.xs, g.ys, physics.samples_per_meter, physics.sampling_rate,
                           g.pitch_m, config.adjoint_weights, backend)


def delay_sum(signals: SignalMatrix, geom: ArrayGeometry, config: ReconConfig = ReconConfig(mode="delay_sum"),
              backend: str | None = None) -> np.ndarray:
    """Plain delay-and-sum: each pixel sums linearly interpolated channel
    samples at its time of flight. With ``adjoint_weights`` each read is
    scaled by ``1 / max(r, pitch)``, which makes this the transpose of
    :func:`oasim.forward.spherical_mean_operator`."""
    return _run(signals, geom, config, False, backend)


def backproject(signals: SignalMatrix, geom: ArrayGeometry, config: ReconConfig = ReconConfig(),
                backend: str | None = None) -> np.ndarray:
    """Derivative backprojection, ``sum_i p(t_ij) - t_ij * dp/dt(t_ij)``."""
    return _run(signals, geom, config, True, backend)


def reconstruct(signals: SignalMatrix, geom: ArrayGeometry, config: ReconConfig = ReconConfig(),
                backend: str | None = None) -> np.ndarray:
    """Dispatch on ``config.mode``."""
    return _run(signals, geom, config, config.mode == "derivative_bp", backend)


def normalize_clip(image: np.ndarray, floor: float = -0.2) -> np.ndarray:
    """Scale by the maximum, then clip below at ``floor``."""
    image = np.asarray(image, dtype=np.float64)
    peak = image.max()
    if not (np.isfinite(peak) and peak > 0):
        raise NumericContractError(f"cannot normalize an image with max {peak}")
    return np.maximum(image / peak, floor)


def to_uint8(image: np.ndarray, floor: float = -0.2) -> np.ndarray:
    """Map a normalized image in [floor, 1] linearly onto 0..255."""
    scaled = (np.clip(image, floor, 1.0) - floor) / (1.0 - floor) * 255.0
    return np.round(scaled).astype(np.uint8)
