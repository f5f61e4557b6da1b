"""Synthetic forearm pressure maps with background/vessel/skin labels.

A scene is a skin curve (quadratic through three random heights) that is
blurred and continued downward by a noisy exponential decay, plus a random
number of non-overlapping elliptical vessels, each the planar cross-section
of a tilted cylinder.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

BACKGROUND, VESSEL, SKIN = 0, 1, 2


class PlacementError(RuntimeError):
    """Could not build a valid scene within the retry budget."""


@dataclass(frozen=True)
class PhantomParams:
    image_n: int = 256
    skin_y_range: tuple[int, int] = (40, 90)
    skin_intensity_range: tuple[float, float] = (0.6, 1.0)
    skin_blur_sigma: float = 1.0
    decay_len_range: tuple[float, float] = (5.0, 25.0)
    decay_intensity_range: tuple[float, float] = (0.2, 0.5)
    vessel_poisson_lambda: float = 5.0
    vessel_radius_range: tuple[float, float] = (2.0, 12.0)
    vessel_max_tilt_deg: float = 45.0
    vessel_intensity_range: tuple[float, float] = (0.4, 1.0)
    vessel_edge_fraction: float = 0.2
    gaussian_vessel_sigma: float = 1.0
    noise_sigma: float = 0.15
    noise_amplitude_range: tuple[float, float] = (0.7, 1.3)
    max_retries: int = 200
    max_scene_attempts: int = 5

    def __post_init__(self):
        n = self.image_n
        lo, hi = self.skin_y_range
        if not (0 <= lo <= hi < n):
            raise ValueError(f"skin_y_range {self.skin_y_range} outside image rows 0..{n - 1}")
        for name in ("skin_intensity_range", "decay_len_range", "decay_intensity_range",
                     "vessel_radius_range", "vessel_intensity_range", "noise_amplitude_range"):
            a, b = getattr(self, name)
            if not (0 <= a <= b):
                raise ValueError(f"{name} must be a non-empty non-negative range, got {(a, b)}")
        if self.vessel_radius_range[0] < 0.5 or 2 * self.vessel_radius_range[1] >= n:
            raise ValueError(f"vessel_radius_range {self.vessel_radius_range} does not fit the image")
        if not self.vessel_poisson_lambda > 0:
            raise ValueError("vessel_poisson_lambda must be > 0")
        if not 0 <= self.vessel_max_tilt_deg < 90:
            raise ValueError("vessel_max_tilt_deg must be in [0, 90)")
        if self.max_retries < 1 or self.max_scene_attempts < 1:
            raise ValueError("retry limits must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def for_size(cls, n: int, **overrides) -> "PhantomParams":
        """Defaults with pixel-valued ranges rescaled from 256 to ``n`` pixels."""
        f = n / 256
        base = cls()
        scaled = {
            "image_n": n,
            "skin_y_range": (int(base.skin_y_range[0] * f), int(base.skin_y_range[1] * f)),
            "decay_len_range": tuple(v * f for v in base.decay_len_range),
            "vessel_radius_range": tuple(max(v * f, 0.5) for v in base.vessel_radius_range),
        }
        scaled.update(overrides)
        return cls(**scaled)


@dataclass(frozen=True)
class Vessel:
    center: tuple[float, float]  # (row, col), filled in at placement
    semi_major: float
    semi_minor: float
    angle: float  # major-axis direction in the image plane, radians from +x
    intensity: float
    center_peaked: bool
    noisy: bool
    tilt: tuple[float, float] = (0.0, 0.0)  # rotations about x and y, radians

    @property
    def area(self) -> float:
        return math.pi * self.semi_major * self.semi_minor


@dataclass
class Phantom:
    pressure: np.ndarray
    labels: np.ndarray
    vessels: list[Vessel] = field(default_factory=list)
    skin_rows: np.ndarray | None = None
    vessel_masks: list[np.ndarray] = field(default_factory=list, repr=False)


def make_rng(seed) -> np.random.Generator:
    """Counter-based stream for one seed (int or tuple of ints)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def quadratic_through(xs, ys, at: np.ndarray) -> np.ndarray:
    """Evaluate the interpolating quadratic of three points (Lagrange form)."""
    (x0, x1, x2), (y0, y1, y2) = xs, ys
    at = np.asarray(at, dtype=np.float64)
    l0 = (at - x1) * (at - x2) / ((x0 - x1) * (x0 - x2))
    l1 = (at - x0) * (at - x2) / ((x1 - x0) * (x1 - x2))
    l2 = (at - x0) * (at - x1) / ((x2 - x0) * (x2 - x1))
    return y0 * l0 + y1 * l1 + y2 * l2


def fit_skin_curve(rng: np.random.Generator, params: PhantomParams = PhantomParams(),
                   heights=None) -> np.ndarray:
    """Skin height (row, float) at every column.

    Heights at columns 0, n/2 and n-1 are drawn from ``skin_y_range`` unless
    given. Curves that leave the image are redrawn up to ``max_retries``.
    """
    n = params.image_n
    cols = np.arange(n)
    anchors = (0, n // 2, n - 1)
    for _ in range(params.max_retries):
        h = heights if heights is not None else rng.uniform(*params.skin_y_range, size=3)
        curve = quadratic_through(anchors, h, cols)
        if curve.min() >= 0 and curve.max() <= n - 1:
            return curve
        if heights is not None:
            break
    raise PlacementError("skin curve leaves the image")


def sample_vessel_count(rng: np.random.Generator, params: PhantomParams = PhantomParams()) -> int:
    """Coin flip: exactly two vessels, or max(Poisson(lambda), 1)."""
    if rng.random() < 0.5:
        return 2
    return max(int(rng.poisson(params.vessel_poisson_lambda)), 1)


def vessel_count_pmf(lam: float, kmax: int) -> np.ndarray:
    """Probability of each count 0..kmax under the coin-flip mixture (last bin is the tail)."""
    k = np.arange(kmax + 1)
    pois = np.exp(-lam + k * np.log(lam) - np.array([math.lgamma(i + 1) for i in k]))
    pmf = 0.5 * pois
    pmf[1] += 0.5 * pois[0]
    pmf[0] = 0.0
    pmf[2] += 0.5
    pmf[kmax] += 1.0 - pmf.sum()
    return pmf


def ellipse_from_tilt(radius: float, theta_x: float, theta_y: float) -> tuple[float, float, float]:
    """Cross-section of a z-axis cylinder rotated about x, then y.

    The rotated axis is ``(sin ty cos tx, -sin tx, cos ty cos tx)``; the plane
    z = 0 cuts an ellipse with semi-minor ``radius`` and semi-major
    ``radius / |a_z|`` along the axis' in-plane projection.
    Returns (semi_major, semi_minor, angle).
    """
    ax = math.sin(theta_y) * math.cos(theta_x)
    ay = -math.sin(theta_x)
    az = math.cos(theta_y) * math.cos(theta_x)
    semi_major = radius / abs(az)
    angle = math.atan2(ay, ax) if (ax or ay) else 0.0
    return semi_major, radius, angle


def make_vessel(rng: np.random.Generator, params: PhantomParams = PhantomParams()) -> Vessel:
    """Vessel shape and texture flags; the center is set during placement."""
    radius = rng.uniform(*params.vessel_radius_range)
    tmax = math.radians(params.vessel_max_tilt_deg)
    tx, ty = rng.uniform(-tmax, tmax, size=2)
    a, b, angle = ellipse_from_tilt(radius, tx, ty)
    return Vessel(
        center=(0.0, 0.0),
        semi_major=a,
        semi_minor=b,
        angle=angle,
        intensity=rng.uniform(*params.vessel_intensity_range),
        center_peaked=bool(rng.random() < 0.5),
        noisy=bool(rng.random() < 0.5),
        tilt=(float(tx), float(ty)),
    )


def ellipse_radius(v: Vessel, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Normalized elliptical radius (1 on the boundary). Rows grow downward."""
    dx = cols - v.center[1]
    dy = v.center[0] - rows
    c, s = math.cos(v.angle), math.sin(v.angle)
    u = dx * c + dy * s
    w = -dx * s + dy * c
    return np.sqrt((u / v.semi_major) ** 2 + (w / v.semi_minor) ** 2)


def _noise(rng, shape, params):
    lo, hi = params.noise_amplitude_range
    return np.clip(rng.normal(1.0, params.noise_sigma, size=shape), lo, hi)


def skin_layer(rng, curve, params):
    """Blurred skin line plus the noisy exponential decay beneath it."""
    n = params.image_n
    rows = np.arange(n)[:, None]
    skin_rows = np.clip(np.round(curve).astype(np.int64), 0, n - 1)
    band = np.zeros((n, n), dtype=bool)
    band[skin_rows, np.arange(n)] = True

    layer = band * rng.uniform(*params.skin_intensity_range)
    if params.skin_blur_sigma > 0:
        layer = ndimage.gaussian_filter(layer, params.skin_blur_sigma)

    decay_len = rng.uniform(*params.decay_len_range)
    if decay_len > 0:
        depth = rows - skin_rows[None, :]
        below = depth > 0
        decay = np.where(below, np.exp(-np.where(below, depth, 0) / decay_len), 0.0)
        decay *= rng.uniform(*params.decay_intensity_range)
        layer = layer + decay * _noise(rng, (n, n), params)
    return layer, band, skin_rows


def _vessel_image(rng, v, mask, r, params):
    img = np.where(mask, v.intensity, 0.0)
    if v.center_peaked:
        frac = params.vessel_edge_fraction
        img = np.where(mask, v.intensity * (1.0 - (1.0 - frac) * np.clip(r, 0, 1)), 0.0)
    if params.gaussian_vessel_sigma > 0:
        img = ndimage.gaussian_filter(img, params.gaussian_vessel_sigma)
    if v.noisy:
        img = img * _noise(rng, img.shape, params)
    return img


_DILATE = np.ones((3, 3), dtype=bool)


def _scene(rng, params):
    n = params.image_n
    curve = fit_skin_curve(rng, params)
    layer, band, skin_rows = skin_layer(rng, curve, params)
    count = sample_vessel_count(rng, params)

    rows = np.arange(n)[:, None].astype(np.float64)
    cols = np.arange(n)[None, :].astype(np.float64)
    occupied = band.copy()
    vessels, masks = [], []
    pressure = layer
    for _ in range(count):
        for _attempt in range(params.max_retries):
            shape = make_vessel(rng, params)
            a = shape.semi_major
            # keep the whole ellipse inside the image and below the skin
            top = skin_rows.max() + 1 + a
            if top > n - 1 - a:
                continue
            center = (rng.uniform(top, n - 1 - a), rng.uniform(a, n - 1 - a))
            v = Vessel(center, shape.semi_major, shape.semi_minor, shape.angle,
                       shape.intensity, shape.center_peaked, shape.noisy, shape.tilt)
            r = ellipse_radius(v, rows, cols)
            mask = r <= 1.0
            if not mask.any():
                continue
            if (ndimage.binary_dilation(mask, _DILATE) & occupied).any():
                continue
            occupied |= mask
            vessels.append(v)
            masks.append(mask)
            pressure = pressure + _vessel_image(rng, v, mask, r, params)
            break
        else:
            raise PlacementError(f"could not place vessel {len(vessels) + 1} of {count}")

    labels = np.zeros((n, n), dtype=np.uint8)
    labels[band] = SKIN
    for m in masks:
        labels[m] = VESSEL
    pressure = np.clip(pressure, 0.0, 1.0)
    return Phantom(pressure, labels, vessels, skin_rows, masks)


def generate_phantom(seed, params: PhantomParams = PhantomParams()) -> Phantom:
    """Deterministic scene for ``seed``.

    If vessel placement runs out of retries the whole scene is redrawn from
    a derived sub-seed, up to ``max_scene_attempts`` times.
    """
    base = tuple(np.atleast_1d(seed).tolist())
    for attempt in range(params.max_scene_attempts):
        rng = make_rng(base if attempt == 0 else base + (0x5CE7E, attempt))
        try:
            return _scene(rng, params)
        except PlacementError:
            continue
    raise PlacementError(f"seed {seed}: no valid scene after {params.max_scene_attempts} attempts")


def generate_batch(n: int, seed: int, params: PhantomParams = PhantomParams(), threads: int = 1,
                   chunk: int = 64):
    """Yield ``n`` phantoms in index order; sample ``i`` uses seed ``(seed, i)``.

    With ``threads > 1`` chunks of samples are generated concurrently; the
    output does not depend on the thread count.
    """
    from concurrent.futures import ThreadPoolExecutor

    def one(i):
        return generate_phantom((seed, i), params)

    if threads <= 1:
        for i in range(n):
            yield one(i)
        return
    with ThreadPoolExecutor(max_workers=threads) as ex:
        for start in range(0, n, chunk):
            yield from ex.map(one, range(start, min(start + chunk, n)))
