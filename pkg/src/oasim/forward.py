"""Discrete forward model: initial pressure map -> raw channel signals.

Pixel ``(row, col)`` of an :class:`ImageGrid` sits at::

    x = origin_x + (col - n // 2) * pitch
    y = origin_y - (row - n // 2) * pitch

so row 0 is the top of the image (closest to the arrays) and pixel
``(n // 2, n // 2)`` is the grid origin. Forward and recon share this.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .geometry import ArrayGeometry


class TimeWindowError(ValueError):
    """A grid pixel lies beyond the last recorded sample of some element."""


@dataclass(frozen=True)
class PhysicsConfig:
    speed_of_sound: float = 1510.0
    sampling_rate: float = 40e6
    n_samples: int = 2030
    grueneisen: float = 1.0

    def __post_init__(self):
        for name in ("speed_of_sound", "sampling_rate", "grueneisen"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be finite and > 0, got {v}")
        if int(self.n_samples) != self.n_samples or self.n_samples < 2:
            raise ValueError(f"n_samples must be an integer >= 2, got {self.n_samples}")

    @property
    def samples_per_meter(self) -> float:
        return self.sampling_rate / self.speed_of_sound


@dataclass(frozen=True)
class ImageGrid:
    n: int = 256
    pitch_m: float = 1e-4
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2:
            raise ValueError(f"grid n must be an integer >= 2, got {self.n}")
        if not (math.isfinite(self.pitch_m) and self.pitch_m > 0):
            raise ValueError(f"pitch_m must be > 0, got {self.pitch_m}")

    @property
    def xs(self) -> np.ndarray:
        return self.origin[0] + (np.arange(self.n) - self.n // 2) * self.pitch_m

    @property
    def ys(self) -> np.ndarray:
        return self.origin[1] - (np.arange(self.n) - self.n // 2) * self.pitch_m

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Flattened (row-major) pixel x and y coordinates."""
        X, Y = np.meshgrid(self.xs, self.ys)
        return X.ravel(), Y.ravel()

    def pixel_of(self, x: float, y: float) -> tuple[int, int]:
        """Nearest (row, col) for a point in meters."""
        col = round((x - self.origin[0]) / self.pitch_m) + self.n // 2
        row = round((self.origin[1] - y) / self.pitch_m) + self.n // 2
        return int(row), int(col)


@dataclass
class SignalMatrix:
    values: np.ndarray  # (n_samples, n_elements)
    physics: PhysicsConfig = field(default_factory=PhysicsConfig)
    geometry: ArrayGeometry | None = field(default=None, repr=False)

    @property
    def shape(self):
        return self.values.shape


def check_time_window(geom: ArrayGeometry, grid: ImageGrid, physics: PhysicsConfig) -> float:
    """Raise :class:`TimeWindowError` if any pixel is out of the recording.

    Returns the largest element-to-pixel distance. The farthest pixel from
    any point is always a grid corner, so only corners are checked.
    """
    xs, ys = grid.xs, grid.ys
    cx = np.array([xs[0], xs[-1], xs[0], xs[-1]])
    cy = np.array([ys[0], ys[0], ys[-1], ys[-1]])
    p = geom.positions
    d = np.sqrt((p[:, 0:1] - cx) ** 2 + (p[:, 1:2] - cy) ** 2)
    dmax = float(d.max())
    limit = (physics.n_samples - 1) / physics.samples_per_meter
    if dmax > limit:
        raise TimeWindowError(
            f"pixel at distance {dmax * 1e3:.4f} mm exceeds the time window "
            f"({limit * 1e3:.4f} mm at c={physics.speed_of_sound} m/s, "
            f"{physics.n_samples} samples @ {physics.sampling_rate:g} Hz)"
        )
    return dmax


def tof_table(geom: ArrayGeometry, grid: ImageGrid, physics: PhysicsConfig) -> np.ndarray:
    """Fractional sample index of every (element, pixel) pair.

    Shape is (n_elements, n, n). This materializes the whole table; the
    kernels recompute it on the fly instead.
    """
    check_time_window(geom, grid, physics)
    X, Y = np.meshgrid(grid.xs, grid.ys)
    p = geom.positions
    dx = p[:, 0, None, None] - X
    dy = p[:, 1, None, None] - Y
    return np.sqrt(dx * dx + dy * dy) * physics.samples_per_meter


def _as_map(pmap, grid: ImageGrid) -> np.ndarray:
    values = np.asarray(pmap, dtype=np.float64)
    if values.shape != (grid.n, grid.n):
        raise ValueError(f"pressure map shape {values.shape} does not match grid {grid.n}x{grid.n}")
    if not np.all(np.isfinite(values)):
        raise ValueError("pressure map contains non-finite values")
    return values


def spherical_mean_operator(pmap, geom: ArrayGeometry, physics: PhysicsConfig = PhysicsConfig(),
                            grid: ImageGrid = ImageGrid(), backend: str | None = None) -> SignalMatrix:
    """Linear stage of the forward model (no time derivative).

    Each pixel deposits ``value / max(r, pitch)`` onto every element's time
    axis at fractional index ``r * fs / c``, split over the two neighboring
    samples. This is the exact transpose of weighted delay-and-sum.
    """
    values = _as_map(pmap, grid)
    check_time_window(geom, grid, physics)
    px, py = grid.coords()
    p = np.ascontiguousarray(geom.positions, dtype=np.float64)
    out = _kernels.splat(values.ravel(), px, py, p[:, 0].copy(), p[:, 1].copy(),
                         physics.samples_per_meter, grid.pitch_m, physics.n_samples, backend)
    return SignalMatrix(np.ascontiguousarray(out.T), physics, geom)


def time_derivative(values: np.ndarray, fs: float) -> np.ndarray:
    """Central differences along axis 0 scaled by fs, one-sided at the ends."""
    if values.shape[0] < 3:
        raise ValueError(f"need at least 3 time samples, got {values.shape[0]}")
    return np.gradient(values, 1.0 / fs, axis=0, edge_order=1)


def simulate_signals(pmap, geom: ArrayGeometry, physics: PhysicsConfig = PhysicsConfig(),
                     grid: ImageGrid = ImageGrid(), backend: str | None = None) -> SignalMatrix:
    """Raw signals ``p(r_i, t)`` for an initial pressure map.

    Spherical-mean splat followed by a central-difference time derivative
    scaled by ``grueneisen / (4 pi c)``.
    """
    sm = spherical_mean_operator(pmap, geom, physics, grid, backend)
    scale = physics.grueneisen / (4 * np.pi * physics.speed_of_sound)
    sm.values = scale * time_derivative(sm.values, physics.sampling_rate)
    return sm


def point_source(grid: ImageGrid, x: float, y: float, amplitude: float = 1.0) -> np.ndarray:
    """Single-pixel map with the pixel nearest to (x, y) set."""
    img = np.zeros((grid.n, grid.n))
    r, c = grid.pixel_of(x, y)
    if not (0 <= r < grid.n and 0 <= c < grid.n):
        raise ValueError(f"point ({x}, {y}) is outside the grid")
    img[r, c] = amplitude
    return img
