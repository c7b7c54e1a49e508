"""PGM/PNG output for rasters.

Rasters are stored ``(n_lines, n_axial)``; image files are written with depth
running down the rows, so every writer transposes and every reader
transposes back.
"""
from __future__ import annotations


import numpy as np
from PIL import Image

from .errors import FormatError

# Viridis anchor colours at 0, 1/8, ..., 1; the 256-entry table is a
# piecewise-linear interpolation of these and never changes at runtime.
_VIRIDIS_ANCHORS = np.array([
    [68, 1, 84], [71, 44, 122], [59, 81, 139], [44, 113, 142], [33, 144, 141],
    [39, 173, 129], [92, 200, 99], [170, 220, 50], [253, 231, 37],
], dtype=float)


def _bake_table(anchors):
    pos = np.linspace(0.0, 1.0, len(anchors))
    t = np.linspace(0.0, 1.0, 256)
    table = np.stack([np.interp(t, pos, anchors[:, k]) for k in range(3)], axis=1)
    return np.rint(table).astype(np.uint8)


VIRIDIS = _bake_table(_VIRIDIS_ANCHORS)


def normalize_minmax(values):
    """Linear min-max map to 0..255 (a constant raster maps to 0)."""
    v = np.asarray(values, dtype=float)
    lo, hi = v.min(), v.max()
    if hi <= lo:
        return np.zeros(v.shape, dtype=np.uint8)
    return np.floor(255.0 * (v - lo) / (hi - lo) + 0.5).astype(np.uint8)


def save_gray(path, raster):
    """Write an 8-bit raster; the format follows the suffix (``.pgm`` is P5)."""
    img = Image.fromarray(np.ascontiguousarray(np.asarray(raster, dtype=np.uint8).T), mode="L")
    img.save(path)


def save_rgb(path, raster_u8, table=VIRIDIS):
    rgb = table[np.asarray(raster_u8, dtype=np.uint8).T]
    Image.fromarray(np.ascontiguousarray(rgb), mode="RGB").save(path)


def load_gray(path):
    try:
        with Image.open(path) as img:
            arr = np.asarray(img.convert("L"))
    except (OSError, ValueError) as exc:
        raise FormatError(f"cannot read image {path}: {exc}") from exc
    return arr.T.copy()


def save_mask(path, mask):
    save_gray(path, np.where(np.asarray(mask) > 0, 255, 0))


def load_mask(path):
    return (load_gray(path) > 127).astype(np.uint8)


def save_map_png(path, values, colormap: str | None = "viridis"):
    u8 = normalize_minmax(values)
    if colormap in (None, "gray", "grey"):
        save_gray(path, u8)
    elif colormap == "viridis":
        save_rgb(path, u8)
    else:
        raise FormatError(f"unknown colormap {colormap!r}")

