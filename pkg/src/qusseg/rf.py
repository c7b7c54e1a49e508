"""RF frames, envelope detection and B-mode reconstruction.

Frames are rectangular rasters of already-beamformed scanlines with shape
``(n_lines, n_axial)``; no scan conversion or gain compensation is applied.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (DegenerateInputError, FormatError, InvalidInputError,
                     ParameterError, SizeError)

SOUND_SPEED = 1540.0

QRF_MAGIC = b"QRF1"
_QRF_HEADER = struct.Struct("<4sIIdddB")
_QRF_DTYPES = {0: np.dtype("<i2"), 1: np.dtype("<f4")}


@dataclass
class RfFrame:
    """Raw RF scanlines plus acquisition metadata.

    ``samples`` has shape ``(n_lines, n_axial)`` in ADC units. ``line_pitch``
    is the lateral spacing in metres and may be unknown.
    """
    samples: np.ndarray
    fs: float
    f0: float
    line_pitch: float | None = None
    sound_speed: float = SOUND_SPEED

    def __post_init__(self):
        self.samples = np.asarray(self.samples)
        if self.samples.ndim != 2:
            raise SizeError(f"RF samples must be 2-D, got shape {self.samples.shape}")
        n_lines, n_axial = self.samples.shape
        if n_lines < 1 or n_axial < 2:
            raise SizeError(f"need n_lines >= 1 and n_axial >= 2, got {self.samples.shape}")
        if not self.fs > 2 * self.f0 > 0:
            raise ParameterError(f"fs={self.fs} must exceed 2*f0={2 * self.f0} (and f0 > 0)")
        if self.sound_speed <= 0:
            raise ParameterError("sound_speed must be positive")
        if not np.all(np.isfinite(self.samples)):
            raise InvalidInputError("RF samples contain non-finite values")

    @property
    def shape(self):
        return self.samples.shape

    @property
    def wavelength(self):
        return self.sound_speed / self.f0

    @property
    def axial_spacing(self):
        # pulse-echo: one sample spans c / (2 fs) of depth
        return self.sound_speed / (2.0 * self.fs)


@dataclass
class EnvelopeFrame:
    amplitude: np.ndarray

    def __post_init__(self):
        self.amplitude = np.asarray(self.amplitude, dtype=float)
        if not np.all(np.isfinite(self.amplitude)):
            raise InvalidInputError("envelope contains non-finite values")
        if np.any(self.amplitude < 0):
            raise InvalidInputError("envelope must be nonnegative")

    @property
    def shape(self):
        return self.amplitude.shape


@dataclass
class BModeImage:
    pixels: np.ndarray
    dynamic_range_db: float = 50.0


def analytic_signal(line):
    """Return ``x + i*H[x]`` for a real vector using the one-sided spectrum.

    The DC bin (and the Nyquist bin for even lengths) keep weight 1, positive
    frequencies are doubled and negative frequencies are zeroed.
    """
    x = np.asarray(line, dtype=float)
    if x.ndim != 1:
        raise SizeError(f"expected a 1-D vector, got shape {x.shape}")
    return _analytic_rows(x[None, :])[0]


def _analytic_rows(x):
    n = x.shape[-1]
    if n < 2:
        raise SizeError(f"analytic signal needs at least 2 samples, got {n}")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("input contains non-finite values")
    weights = np.zeros(n)
    weights[0] = 1.0
    if n % 2 == 0:
        weights[n // 2] = 1.0
        weights[1:n // 2] = 2.0
    else:
        weights[1:(n + 1) // 2] = 2.0
    spectrum = np.fft.fft(x, axis=-1)
    return np.fft.ifft(spectrum * weights, axis=-1)


def envelope(frame: RfFrame) -> EnvelopeFrame:
    """Per-scanline magnitude of the analytic signal."""
    amp = np.abs(_analytic_rows(np.asarray(frame.samples, dtype=float)))
    return EnvelopeFrame(amp)


def log_compress(env: EnvelopeFrame, dynamic_range_db: float = 50.0) -> BModeImage:
    """Map amplitudes to 8 bits over ``dynamic_range_db`` below the frame maximum."""
    if not dynamic_range_db > 0:
        raise ParameterError("dynamic range must be positive")
    amp = np.asarray(env.amplitude, dtype=float)
    a_max = amp.max() if amp.size else 0.0
    if not a_max > 0:
        raise DegenerateInputError("all-zero envelope has no reference amplitude")
    with np.errstate(divide="ignore"):
        db = 20.0 * np.log10(amp / a_max) + dynamic_range_db
    db = np.clip(db, 0.0, dynamic_range_db)
    # values are nonnegative, so floor(x + 0.5) is round-half-away-from-zero
    pixels = np.floor(255.0 * db / dynamic_range_db + 0.5)
    return BModeImage(np.clip(pixels, 0, 255).astype(np.uint8), float(dynamic_range_db))


def bmode(frame: RfFrame, dynamic_range_db: float = 50.0) -> BModeImage:
    return log_compress(envelope(frame), dynamic_range_db)


def write_rf(path, frame: RfFrame, dtype: str = "float32"):
    """Write a QRF1 container. ``dtype`` is ``"int16"`` or ``"float32"``."""
    tags = {"int16": 0, "float32": 1}
    if dtype not in tags:
        raise ParameterError(f"unsupported RF dtype {dtype!r}")
    tag = tags[dtype]
    samples = frame.samples
    if tag == 0:
        samples = np.clip(np.rint(samples), -32768, 32767)
    n_lines, n_axial = frame.shape
    header = _QRF_HEADER.pack(QRF_MAGIC, n_lines, n_axial, float(frame.fs),
                              float(frame.f0), float(frame.sound_speed), tag)
    body = np.ascontiguousarray(samples, dtype=_QRF_DTYPES[tag]).tobytes()
    Path(path).write_bytes(header + body)


def read_rf(path, line_pitch=None) -> RfFrame:
    data = Path(path).read_bytes()
    return parse_rf(data, line_pitch=line_pitch)


def parse_rf(data: bytes, line_pitch=None) -> RfFrame:
    if len(data) < _QRF_HEADER.size:
        raise FormatError("truncated QRF1 header")
    magic, n_lines, n_axial, fs, f0, c, tag = _QRF_HEADER.unpack_from(data)
    if magic != QRF_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {QRF_MAGIC!r}")
    if tag not in _QRF_DTYPES:
        raise FormatError(f"unknown dtype tag {tag}")
    dt = _QRF_DTYPES[tag]
    expected = n_lines * n_axial * dt.itemsize
    body = data[_QRF_HEADER.size:]
    if len(body) != expected:
        raise FormatError(f"QRF1 body has {len(body)} bytes, expected {expected}")
    samples = np.frombuffer(body, dtype=dt).reshape(n_lines, n_axial).astype(float)
    return RfFrame(samples, fs=fs, f0=f0, line_pitch=line_pitch, sound_speed=c)
