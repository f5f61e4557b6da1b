"""Hot loops: time-of-flight splatting (forward) and gathering (recon).

Two implementations of each kernel live here. The numba ones are used by
default; set ``OASIM_DISABLE_NUMBA=1`` to force the pure-numpy path (or when
numba is not importable). Both accumulate over elements in index order, so
masking by zeroed columns and masking by skipping columns agree exactly.

Parallel layout keeps results independent of the thread count: the splat is
split over elements (one private column each), the gather over image rows
(one private accumulator per pixel).
"""
from __future__ import annotations

import os

import numpy as np

_DISABLE = os.environ.get("OASIM_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    if _DISABLE:
        raise ImportError
    import numba
    from numba import njit, prange

    HAVE_NUMBA = True
    if not any(k in os.environ for k in ("NUMBA_THREADING_LAYER", "NUMBA_THREADING_LAYER_PRIORITY")):
        # the system TBB is often too old for numba and only produces a warning
        numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]
except ImportError:
    numba = None
    HAVE_NUMBA = False

BACKEND = "numba" if HAVE_NUMBA else "numpy"


# --------------------------------------------------------------------------
# numpy reference kernels


def splat_numpy(values, px, py, ex, ey, fs_over_c, pitch, n_samples):
    """Deposit pixel values onto each element's time axis (linear two-bin)."""
    n_el = ex.shape[0]
    out = np.zeros((n_el, n_samples))
    nz = np.flatnonzero(values)
    v, x, y = values[nz], px[nz], py[nz]
    for i in range(n_el):
        dx = ex[i] - x
        dy = ey[i] - y
        d = np.sqrt(dx * dx + dy * dy)
        t = d * fs_over_c
        k = t.astype(np.int64)
        a = t - k
        vw = v * (1.0 / np.maximum(d, pitch))
        lo = np.bincount(k, weights=vw * (1.0 - a), minlength=n_samples + 1)
        hi = np.bincount(k + 1, weights=vw * a, minlength=n_samples + 2)
        out[i] = lo[:n_samples] + hi[:n_samples]
    return out


def gather_numpy(sig_t, dsig_t, ex, ey, active, xs, ys, fs_over_c, fs, pitch, weighted):
    """Delay-and-sum over ``active`` elements for the grid ``ys x xs``.

    ``sig_t`` is (n_elements, n_samples). When ``dsig_t`` is given, each read
    also subtracts ``t * dsig(t)`` (derivative backprojection).
    """
    n_s = sig_t.shape[1]
    X = np.broadcast_to(xs[None, :], (ys.size, xs.size)).ravel()
    Y = np.broadcast_to(ys[:, None], (ys.size, xs.size)).ravel()
    acc = np.zeros(X.size)
    for i in active:
        dx = ex[i] - X
        dy = ey[i] - Y
        d = np.sqrt(dx * dx + dy * dy)
        t = d * fs_over_c
        k = t.astype(np.int64)
        a = t - k
        k1 = np.minimum(k + 1, n_s - 1)
        row = sig_t[i]
        v = (1.0 - a) * row[k] + a * row[k1]
        if weighted:
            v = v * (1.0 / np.maximum(d, pitch))
        if dsig_t is not None:
            drow = dsig_t[i]
            dv = (1.0 - a) * drow[k] + a * drow[k1]
            v = v - (t / fs) * dv
        acc += v
    return acc.reshape(ys.size, xs.size)


# --------------------------------------------------------------------------
# numba kernels

if HAVE_NUMBA:

    @njit(parallel=True, cache=True)
    def _splat_nb(values, px, py, ex, ey, fs_over_c, pitch, n_samples):
        n_el = ex.shape[0]
        n_px = values.shape[0]
        out = np.zeros((n_el, n_samples))
        for i in prange(n_el):
            col = np.zeros(n_samples + 2)
            for j in range(n_px):
                v = values[j]
                if v == 0.0:
                    continue
                dx = ex[i] - px[j]
                dy = ey[i] - py[j]
                d = np.sqrt(dx * dx + dy * dy)
                t = d * fs_over_c
                k = np.int64(t)
                a = t - k
                vw = v * (1.0 / max(d, pitch))
                col[k] += vw * (1.0 - a)
                col[k + 1] += vw * a
            for s in range(n_samples):
                out[i, s] = col[s]
        return out

    @njit(parallel=True, cache=True)
    def _gather_nb(sig_t, dsig_t, use_deriv, ex, ey, active, xs, ys,
                   fs_over_c, fs, pitch, weighted):
        n_s = sig_t.shape[1]
        out = np.zeros((ys.shape[0], xs.shape[0]))
        for r in prange(ys.shape[0]):
            y = ys[r]
            for c in range(xs.shape[0]):
                x = xs[c]
                acc = 0.0
                for ii in range(active.shape[0]):
                    i = active[ii]
                    dx = ex[i] - x
                    dy = ey[i] - y
                    d = np.sqrt(dx * dx + dy * dy)
                    t = d * fs_over_c
                    k = np.int64(t)
                    a = t - k
                    k1 = min(k + 1, n_s - 1)
                    v = (1.0 - a) * sig_t[i, k] + a * sig_t[i, k1]
                    if weighted:
                        v = v * (1.0 / max(d, pitch))
                    if use_deriv:
                        dv = (1.0 - a) * dsig_t[i, k] + a * dsig_t[i, k1]
                        v = v - (t / fs) * dv
                    acc += v
                out[r, c] = acc
        return out

    def splat_numba(values, px, py, ex, ey, fs_over_c, pitch, n_samples):
        return _splat_nb(values, px, py, ex, ey, float(fs_over_c), float(pitch), int(n_samples))

    def gather_numba(sig_t, dsig_t, ex, ey, active, xs, ys, fs_over_c, fs, pitch, weighted):
        use_deriv = dsig_t is not None
        if not use_deriv:
            dsig_t = sig_t[:1, :1]
        return _gather_nb(sig_t, dsig_t, use_deriv, ex, ey, active, xs, ys,
                          float(fs_over_c), float(fs), float(pitch), bool(weighted))


def _pick(backend):
    backend = backend or BACKEND
    if backend == "numba":
        if not HAVE_NUMBA:
            raise RuntimeError("numba backend requested but numba is unavailable or disabled")
        return splat_numba, gather_numba
    if backend == "numpy":
        return splat_numpy, gather_numpy
    raise ValueError(f"unknown backend {backend!r}")


def splat(values, px, py, ex, ey, fs_over_c, pitch, n_samples, backend=None):
    """Returns (n_elements, n_samples)."""
    return _pick(backend)[0](values, px, py, ex, ey, fs_over_c, pitch, n_samples)


def gather(sig_t, dsig_t, ex, ey, active, xs, ys, fs_over_c, fs, pitch, weighted, backend=None):
    return _pick(backend)[1](sig_t, dsig_t, ex, ey, active, xs, ys, fs_over_c, fs, pitch, weighted)


def set_threads(n: int) -> int:
    """Cap kernel worker threads; returns the count actually in effect."""
    if not HAVE_NUMBA:
        return 1
    n = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)
    return n


def get_threads() -> int:
    return numba.get_num_threads() if HAVE_NUMBA else 1
