"""QWT1 named-tensor container and selective weight import.

Layout (little-endian): magic ``QWT1``, u32 tensor count, then per tensor
u32 name length, UTF-8 name, u32 rank, rank x u32 dims, float32 data.
Convolution kernels are stored ``(out, in, kh, kw)``.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError, WeightImportError

QWT_MAGIC = b"QWT1"

# Converted VGG19 tensors are expected under these names; they land on the
# first two encoder levels (requires base_channels=64 and the matching layer).
VGG19_MAPPING = {
    "block1_conv1.w": "enc0.conv0.w", "block1_conv1.b": "enc0.conv0.b",
    "block1_conv2.w": "enc0.conv1.w", "block1_conv2.b": "enc0.conv1.b",
    "block2_conv1.w": "enc1.conv0.w", "block2_conv1.b": "enc1.conv0.b",
    "block2_conv2.w": "enc1.conv1.w", "block2_conv2.b": "enc1.conv1.b",
}


def save_weights(path, tensors):
    chunks = [QWT_MAGIC, struct.pack("<I", len(tensors))]
    for name, value in tensors.items():
        raw = name.encode("utf-8")
        arr = np.asarray(value)
        chunks.append(struct.pack("<I", len(raw)) + raw)
        chunks.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_weights(path):
    """Read a QWT1 file into an ordered ``{name: float32 array}`` dict."""
    data = Path(path).read_bytes()
    if data[:4] != QWT_MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}, expected {QWT_MAGIC!r}")
    try:
        (count,) = struct.unpack_from("<I", data, 4)
        pos = 8
        out = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<I", data, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}I", data, pos)
            pos += 4 * rank
            size = int(np.prod(dims, dtype=np.int64))
            if pos + 4 * size > len(data):
                raise FormatError(f"tensor {name!r} runs past the end of the file")
            out[name] = np.frombuffer(data, dtype="<f4", count=size, offset=pos).reshape(dims).copy()
            pos += 4 * size
    except struct.error as exc:
        raise FormatError(f"truncated QWT1 file: {exc}") from exc
    if pos != len(data):
        raise FormatError("trailing bytes after the last tensor")
    return out


def import_weights(params, weight_file, mapping=None):
    """Copy tensors from ``weight_file`` into a copy of ``params``.

    ``mapping`` maps file tensor names to parameter names; ``None`` means
    "same names, every tensor in the file". Only mapped entries change.
    Missing or mis-shaped tensors are all reported in one
    :class:`WeightImportError`.
    """
    tensors = load_weights(weight_file) if not isinstance(weight_file, dict) else weight_file
    if mapping is None:
        mapping = {k: k for k in tensors}
    bad = []
    for src, dst in mapping.items():
        if src not in tensors:
            bad.append(f"{src} (missing from file)")
        elif dst not in params:
            bad.append(f"{dst} (no such parameter)")
        elif tensors[src].shape != params[dst].shape:
            bad.append(f"{dst} (file {tensors[src].shape} vs model {params[dst].shape})")
    if bad:
        raise WeightImportError("cannot import: " + "; ".join(bad), names=bad)
    out = dict(params)
    for src, dst in mapping.items():
        out[dst] = tensors[src].astype(params[dst].dtype)
    return out
