"""Sliding-window entropy maps of envelope amplitude.

The estimator is the binned form of the differential entropy
``-integral f(A) ln f(A) dA``: an equal-width histogram over the window's
``[min, max]`` gives a piecewise-constant density, whose entropy is
``-sum p_i ln(p_i / delta)``.
"""
from __future__ import annotations

import os
import struct
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import (DegenerateInputError, FormatError, ParameterError,
                     SizeError)
from .rf import EnvelopeFrame, RfFrame

QEM_MAGIC = b"QEM1"
_QEM_HEADER = struct.Struct("<4sII5Idd")


@dataclass(frozen=True)
class WindowSpec:
    """Window extent and hop, in samples (axial) and scanlines (lateral).

    The default 100 x 14 is the literal window size used for the clinical
    maps; :func:`window_from_wavelengths` derives one from acquisition
    physics instead.
    """
    axial_samples: int = 100
    lateral_lines: int = 14
    stride_axial: int = 1
    stride_lateral: int = 1
    n_bins: int = 64

    def __post_init__(self):
        for name in ("axial_samples", "lateral_lines", "stride_axial", "stride_lateral", "n_bins"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ParameterError(f"{name} must be a positive integer, got {value!r}")
        if self.axial_samples * self.lateral_lines < 2 * self.n_bins:
            warnings.warn(
                f"window of {self.axial_samples * self.lateral_lines} samples is sparse "
                f"for {self.n_bins} bins", RuntimeWarning, stacklevel=3)

    @property
    def size(self):
        return self.axial_samples * self.lateral_lines


@dataclass
class EntropyMap:
    """Entropy values in nats on the window grid.

    ``values`` has shape ``(n_lateral_positions, n_axial_positions)``, the
    same orientation as the source frame. ``origin_offset`` is the
    ``(axial, lateral)`` position of the first window centre.
    """
    values: np.ndarray
    window: WindowSpec
    origin_offset: tuple[float, float]

    @property
    def shape(self):
        return self.values.shape


def _entropy_rows(windows, n_bins):
    """Entropy of every row of a ``(B, N)`` array plus a degenerate-row mask."""
    windows = np.asarray(windows, dtype=float)
    b, n = windows.shape
    lo = windows.min(axis=1)
    hi = windows.max(axis=1)
    span = hi - lo
    degenerate = ~(span > 0)
    span = np.where(degenerate, 1.0, span)
    idx = ((windows - lo[:, None]) / span[:, None] * n_bins).astype(np.int64)
    np.minimum(idx, n_bins - 1, out=idx)
    idx += (np.arange(b, dtype=np.int64) * n_bins)[:, None]
    counts = np.bincount(idx.ravel(), minlength=b * n_bins).reshape(b, n_bins)
    delta = span / n_bins
    p = counts / n
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(counts > 0, p * np.log(p / delta[:, None]), 0.0)
    return -terms.sum(axis=1), degenerate


def estimate_entropy(samples, n_bins: int) -> float:
    """Histogram estimate of differential entropy, in nats."""
    x = np.asarray(samples, dtype=float).ravel()
    if n_bins < 2:
        raise ParameterError(f"n_bins must be >= 2, got {n_bins}")
    if x.size < 2:
        raise SizeError("entropy needs at least 2 samples")
    h, degenerate = _entropy_rows(x[None, :], n_bins)
    if degenerate[0]:
        raise DegenerateInputError("constant window: max == min")
    return float(h[0])


def map_shape(frame_shape, window: WindowSpec):
    n_lines, n_axial = frame_shape
    if window.lateral_lines > n_lines or window.axial_samples > n_axial:
        raise SizeError(
            f"window {window.axial_samples}x{window.lateral_lines} (axial x lateral) "
            f"does not fit frame of {n_axial} samples x {n_lines} lines")
    return ((n_lines - window.lateral_lines) // window.stride_lateral + 1,
            (n_axial - window.axial_samples) // window.stride_axial + 1)


def _workers():
    try:
        return max(1, int(os.environ.get("QUS_THREADS", "1")))
    except ValueError:
        return 1


def entropy_map(env: EnvelopeFrame, window: WindowSpec, workers: int | None = None) -> EntropyMap:
    """Evaluate :func:`estimate_entropy` at every position of the stride grid.

    Windows with constant amplitude are assigned the smallest entropy found
    among the other windows of the same map.
    """
    if window.n_bins < 2:
        raise ParameterError(f"n_bins must be >= 2, got {window.n_bins}")
    amp = np.asarray(env.amplitude, dtype=float)
    ml, ma = map_shape(amp.shape, window)
    views = sliding_window_view(amp, (window.lateral_lines, window.axial_samples))
    views = views[::window.stride_lateral, ::window.stride_axial]

    values = np.empty((ml, ma))
    degenerate = np.zeros((ml, ma), dtype=bool)
    # about 4M samples per chunk keeps the copied window stack small
    rows_per_chunk = max(1, (1 << 22) // max(1, ma * window.size))

    def run(start):
        stop = min(ml, start + rows_per_chunk)
        block = views[start:stop].reshape(-1, window.size)
        h, deg = _entropy_rows(block, window.n_bins)
        values[start:stop] = h.reshape(stop - start, ma)
        degenerate[start:stop] = deg.reshape(stop - start, ma)

    starts = range(0, ml, rows_per_chunk)
    n_workers = workers or _workers()
    if n_workers > 1:
        with ThreadPoolExecutor(n_workers) as pool:
            list(pool.map(run, starts))
    else:
        for s in starts:
            run(s)

    if degenerate.all():
        raise DegenerateInputError("every window of the frame is constant")
    if degenerate.any():
        values[degenerate] = values[~degenerate].min()
    origin = ((window.axial_samples - 1) / 2.0, (window.lateral_lines - 1) / 2.0)
    return EntropyMap(values, window, origin)


def window_from_wavelengths(n_wavelengths: float, frame: RfFrame, lateral_lines: int | None = None,
                            stride_axial: int = 1, stride_lateral: int = 1,
                            n_bins: int = 64) -> WindowSpec:
    """Window spanning ``n_wavelengths`` in depth (and laterally, if the pitch is known).

    An explicit ``lateral_lines`` wins over the pitch-derived value.
    """
    if not n_wavelengths > 0:
        raise ParameterError("n_wavelengths must be positive")
    extent = n_wavelengths * frame.wavelength
    axial = max(1, int(round(extent / frame.axial_spacing)))
    if lateral_lines is None:
        if frame.line_pitch is None:
            raise ParameterError("frame has no line_pitch; pass lateral_lines explicitly")
        lateral_lines = max(1, int(round(extent / frame.line_pitch)))
    return WindowSpec(axial, int(lateral_lines), stride_axial, stride_lateral, n_bins)


# -- resampling ---------------------------------------------------------------

def _half_pixel_source(n_in, n_out):
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    return np.clip(src, 0.0, n_in - 1)


def _lerp_axis(arr, src, axis):
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, arr.shape[axis] - 1)
    w = src - i0
    shape = [1] * arr.ndim
    shape[axis] = -1
    a0 = np.take(arr, i0, axis=axis)
    a1 = np.take(arr, i1, axis=axis)
    return a0 + w.reshape(shape) * (a1 - a0)


def interp_matrix(n_in, n_out):
    """Dense ``(n_out, n_in)`` bilinear weights, half-pixel centres."""
    src = _half_pixel_source(n_in, n_out)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    w = src - i0
    m = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0), 1.0 - w)
    np.add.at(m, (rows, i1), w)
    return m


def resize_bilinear(raster, out_h: int, out_w: int):
    """Bilinear resize with half-pixel centres (``align_corners=False``)."""
    r = np.asarray(raster, dtype=float)
    if r.ndim != 2 or r.size == 0:
        raise SizeError(f"expected a non-empty 2-D raster, got shape {r.shape}")
    if out_h < 1 or out_w < 1:
        raise SizeError("output dims must be >= 1")
    out = _lerp_axis(r, _half_pixel_source(r.shape[0], out_h), 0)
    out = _lerp_axis(out, _half_pixel_source(r.shape[1], out_w), 1)
    return np.clip(out, r.min(), r.max())


def resize_nearest(raster, out_h: int, out_w: int):
    r = np.asarray(raster)
    if r.ndim != 2 or r.size == 0:
        raise SizeError(f"expected a non-empty 2-D raster, got shape {r.shape}")
    rows = np.minimum(((np.arange(out_h) + 0.5) * r.shape[0] / out_h).astype(np.int64), r.shape[0] - 1)
    cols = np.minimum(((np.arange(out_w) + 0.5) * r.shape[1] / out_w).astype(np.int64), r.shape[1] - 1)
    return r[np.ix_(rows, cols)]


def align_to_frame(emap: EntropyMap, frame_shape):
    """Place map cells at their window centres on the full frame grid.

    Frame pixels between centres are linearly interpolated; the half-window
    margins take the nearest edge value.
    """
    n_lines, n_axial = frame_shape
    w = emap.window
    ax0, lat0 = emap.origin_offset
    src_lat = np.clip((np.arange(n_lines) - lat0) / w.stride_lateral, 0, emap.shape[0] - 1)
    src_ax = np.clip((np.arange(n_axial) - ax0) / w.stride_axial, 0, emap.shape[1] - 1)
    out = _lerp_axis(emap.values, src_lat, 0)
    return _lerp_axis(out, src_ax, 1)


# -- QEM1 container -----------------------------------------------------------

def write_entropy_map(path, emap: EntropyMap):
    h, w = emap.shape
    win = emap.window
    header = _QEM_HEADER.pack(QEM_MAGIC, h, w, win.axial_samples, win.lateral_lines,
                              win.stride_axial, win.stride_lateral, win.n_bins,
                              float(emap.origin_offset[0]), float(emap.origin_offset[1]))
    body = np.ascontiguousarray(emap.values, dtype="<f4").tobytes()
    Path(path).write_bytes(header + body)


def read_entropy_map(path) -> EntropyMap:
    data = Path(path).read_bytes()
    if len(data) < _QEM_HEADER.size:
        raise FormatError("truncated QEM1 header")
    magic, h, w, ax, lat, sa, sl, nb, o_ax, o_lat = _QEM_HEADER.unpack_from(data)
    if magic != QEM_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {QEM_MAGIC!r}")
    body = data[_QEM_HEADER.size:]
    if len(body) != 4 * h * w:
        raise FormatError(f"QEM1 body has {len(body)} bytes, expected {4 * h * w}")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        window = WindowSpec(ax, lat, sa, sl, nb)
    values = np.frombuffer(body, dtype="<f4").reshape(h, w).astype(float)
    return EntropyMap(values, window, (o_ax, o_lat))
