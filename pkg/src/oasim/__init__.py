"""Optoacoustic simulation, backprojection and evaluation toolkit."""

__version__ = "0.1.0"

from .geometry import ArrayGeometry, ChannelMask, make_array, sparse_mask, limited_view_mask, linear_part_mask
from .forward import ImageGrid, PhysicsConfig, SignalMatrix, simulate_signals, spherical_mean_operator, tof_table
from .recon import ReconConfig, backproject, delay_sum, bandpass, apply_channel_mask, normalize_clip
from .phantom import PhantomParams, generate_phantom

__all__ = [
    "ArrayGeometry", "ChannelMask", "make_array", "sparse_mask", "limited_view_mask", "linear_part_mask",
    "ImageGrid", "PhysicsConfig", "SignalMatrix", "simulate_signals", "spherical_mean_operator", "tof_table",
    "ReconConfig", "backproject", "delay_sum", "bandpass", "apply_channel_mask", "normalize_clip",
    "PhantomParams", "generate_phantom",
]
