"""Transducer array geometries and channel masks.

All positions are in meters in a single planar frame whose origin is the
array's center of curvature. The arrays sit at positive y and look down
toward the imaged region around the origin.

Element ordering:

* ``semi_circle``, ``multisegment``, ``linear``: left to right (increasing x).
* ``virtual_circle``: counterclockwise, element 0 at the bottom (angle -pi/2),
  so the central element 512 sits at the top like the other arrays.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

RADIUS_M = 40e-3
LINEAR_PITCH_M = 0.25e-3
CONCAVE_PITCH_M = 0.6e-3
N_LINEAR = 128
N_CONCAVE = 64

ARRAY_KINDS = ("semi_circle", "multisegment", "linear", "virtual_circle")
MASK_KINDS = ("full", "sparse", "limited_view", "linear_part")

# short names used in dataset naming (vc_raw, ms_ss64_BP, ...)
SHORT_NAMES = {
    "virtual_circle": "vc",
    "multisegment": "ms",
    "linear": "linear",
    "semi_circle": "sc",
}


@dataclass(frozen=True, eq=False)
class ArrayGeometry:
    name: str
    positions: np.ndarray = field(repr=False)  # (n_elements, 2)
    radius_m: float | None = RADIUS_M

    @property
    def n_elements(self) -> int:
        return self.positions.shape[0]

    @property
    def short_name(self) -> str:
        return SHORT_NAMES[self.name]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["element_index", "x_m", "y_m"])
            for i, (x, y) in enumerate(self.positions):
                writer.writerow([i, repr(float(x)), repr(float(y))])


@dataclass(frozen=True, eq=False)
class ChannelMask:
    active: np.ndarray = field(repr=False)  # bool, (n_elements,)
    kind: str = "full"

    @property
    def count(self) -> int:
        return int(self.active.sum())

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.active)


def _on_circle(angles: np.ndarray, radius: float = RADIUS_M) -> np.ndarray:
    return np.stack([radius * np.cos(angles), radius * np.sin(angles)], axis=1)


def _semi_circle() -> np.ndarray:
    # endpoints included: angular span is exactly pi
    angles = np.pi - np.pi * np.arange(256) / 255
    return _on_circle(angles)


def _virtual_circle() -> np.ndarray:
    angles = -np.pi / 2 + 2 * np.pi * np.arange(1024) / 1024
    return _on_circle(angles)


def _linear_segment() -> np.ndarray:
    half = (N_LINEAR - 1) * LINEAR_PITCH_M / 2
    x = -half + LINEAR_PITCH_M * np.arange(N_LINEAR)
    # the line is a chord of the 40 mm circle so both arcs start at its endpoints
    y = np.full(N_LINEAR, np.sqrt(RADIUS_M**2 - half**2))
    return np.stack([x, y], axis=1)


def _multisegment() -> np.ndarray:
    half = (N_LINEAR - 1) * LINEAR_PITCH_M / 2
    y_line = np.sqrt(RADIUS_M**2 - half**2)
    end_angle = np.arctan2(y_line, half)
    step = CONCAVE_PITCH_M / RADIUS_M  # arc-length pitch
    k = np.arange(1, N_CONCAVE + 1)
    right = _on_circle(end_angle - step * k)
    left = _on_circle(np.pi - end_angle + step * k)[::-1]
    return np.concatenate([left, _linear_segment(), right], axis=0)


def make_array(kind: str) -> ArrayGeometry:
    """Build one of the four supported arrays."""
    if kind == "semi_circle":
        pos = _semi_circle()
    elif kind == "virtual_circle":
        pos = _virtual_circle()
    elif kind == "multisegment":
        pos = _multisegment()
    elif kind == "linear":
        return ArrayGeometry("linear", _linear_segment(), None)
    else:
        raise ValueError(f"unknown array kind {kind!r}; expected one of {ARRAY_KINDS}")
    pos.setflags(write=False)
    return ArrayGeometry(kind, pos, RADIUS_M)


def full_mask(geom: ArrayGeometry) -> ChannelMask:
    return ChannelMask(np.ones(geom.n_elements, dtype=bool), "full")


def sparse_mask(geom: ArrayGeometry, keep: int) -> ChannelMask:
    """Uniform-stride subsampling starting at element 0."""
    n = geom.n_elements
    if keep <= 0 or n % keep:
        raise ValueError(f"sparse keep={keep} does not divide n_elements={n}")
    active = np.zeros(n, dtype=bool)
    active[:: n // keep] = True
    return ChannelMask(active, "full" if keep == n else "sparse")


def limited_view_mask(geom: ArrayGeometry, keep: int) -> ChannelMask:
    """Contiguous run of ``keep`` elements centered on the array.

    Odd leftovers put the extra element on the high side, i.e. the run
    starts at ``(n - keep) // 2``.
    """
    n = geom.n_elements
    if keep <= 0 or keep > n:
        raise ValueError(f"limited-view keep={keep} outside 1..{n}")
    start = (n - keep) // 2
    active = np.zeros(n, dtype=bool)
    active[start : start + keep] = True
    return ChannelMask(active, "full" if keep == n else "limited_view")


def linear_part_mask(geom: ArrayGeometry) -> ChannelMask:
    if geom.name != "multisegment":
        raise ValueError(f"linear part mask needs a multisegment array, got {geom.name}")
    active = np.zeros(geom.n_elements, dtype=bool)
    active[N_CONCAVE : N_CONCAVE + N_LINEAR] = True
    return ChannelMask(active, "linear_part")


def parse_mask(geom: ArrayGeometry, spec: str | None) -> ChannelMask | None:
    """Parse ``none``, ``sparse:K``, ``limited:K`` or ``linear``."""
    if spec is None or spec == "none":
        return None
    kind, _, arg = spec.partition(":")
    if kind == "sparse":
        return sparse_mask(geom, int(arg))
    if kind == "limited":
        return limited_view_mask(geom, int(arg))
    if kind == "linear":
        return linear_part_mask(geom)
    raise ValueError(f"unknown mask spec {spec!r}")


def mask_tag(spec: str | None) -> str:
    """Dataset-name fragment for a mask spec (``sparse:64`` -> ``_ss64``)."""
    if spec is None or spec == "none":
        return ""
    kind, _, arg = spec.partition(":")
    return {"sparse": f"_ss{arg}", "limited": f"_lv{arg}", "linear": "_linear"}[kind]


def angular_coverage(geom: ArrayGeometry, mask: ChannelMask | None = None) -> float:
    """Angle subtended at the origin by the first and last active element."""
    idx = np.arange(geom.n_elements) if mask is None else mask.indices
    p = geom.positions[idx]
    ang = np.unwrap(np.arctan2(p[:, 1], p[:, 0]))
    return float(abs(ang[-1] - ang[0]))


def load_csv(path) -> np.ndarray:
    data = np.loadtxt(Path(path), delimiter=",", skiprows=1)
    return np.atleast_2d(data)[:, 1:3]
