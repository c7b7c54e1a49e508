"""Synthetic RF phantoms with a known elliptical inclusion.

Scatterers are drawn per (line, sample) cell as a Poisson count with
Gaussian amplitudes, then every scanline is convolved with a
Gaussian-modulated sinusoid at the centre frequency. Lines are independent
unless ``lateral_blur`` is set.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import convolve1d

from .errors import GeometryError, ParameterError
from .imageio import save_mask
from .rf import SOUND_SPEED, RfFrame, write_rf

LABELS = ("benign-like", "malignant-like")


@dataclass(frozen=True)
class Ellipse:
    center_axial: float
    center_lateral: float
    radius_axial: float
    radius_lateral: float

    def mask(self, n_lines, n_axial):
        lines = np.arange(n_lines)[:, None]
        samples = np.arange(n_axial)[None, :]
        r = (((samples - self.center_axial) / self.radius_axial) ** 2
             + ((lines - self.center_lateral) / self.radius_lateral) ** 2)
        return (r <= 1.0).astype(np.uint8)


@dataclass(frozen=True)
class PhantomSpec:
    n_lines: int = 64
    n_axial: int = 512
    fs: float = 40e6
    f0: float = 9e6
    scatterer_density_bg: float = 10.0
    scatterer_density_inc: float = 10.0
    amplitude_ratio_inc: float = 1.0
    inclusion: Ellipse | None = None
    rng_seed: int = 0
    amplitude: float = 1.0
    fractional_bandwidth: float = 0.6
    lateral_blur: bool = False
    sound_speed: float = SOUND_SPEED


@dataclass
class LabeledFrame:
    rf: RfFrame
    truth_mask: np.ndarray
    case_id: int = 0
    label: str = ""
    spec: PhantomSpec | None = None


def pulse_sigma(f0, fractional_bandwidth):
    """Time-domain sigma (s) of a Gaussian envelope whose -6 dB bandwidth is ``fbw * f0``."""
    bandwidth = fractional_bandwidth * f0
    return math.sqrt(2.0 * math.log(2.0)) / (math.pi * bandwidth)


def pulse(fs, f0, fractional_bandwidth=0.6):
    """Gaussian-modulated cosine sampled at ``fs``, truncated at +/- 3 sigma."""
    sigma = pulse_sigma(f0, fractional_bandwidth)
    half = int(math.floor(3.0 * sigma * fs))
    t = np.arange(-half, half + 1) / fs
    return np.exp(-t ** 2 / (2.0 * sigma ** 2)) * np.cos(2.0 * math.pi * f0 * t)


def resolution_cell_samples(fs, f0, fractional_bandwidth=0.6):
    """-6 dB (half-amplitude) length of the pulse envelope, in samples."""
    sigma = pulse_sigma(f0, fractional_bandwidth)
    return 2.0 * sigma * math.sqrt(2.0 * math.log(2.0)) * fs


def _check(spec: PhantomSpec):
    if spec.n_lines < 1 or spec.n_axial < 2:
        raise ParameterError("phantom needs n_lines >= 1 and n_axial >= 2")
    if not spec.fs > 2 * spec.f0 > 0:
        raise ParameterError("fs must exceed 2*f0")
    if spec.scatterer_density_bg < 0 or spec.scatterer_density_inc < 0:
        raise ParameterError("scatterer densities must be >= 0")
    if spec.amplitude_ratio_inc < 0:
        raise ParameterError("amplitude_ratio_inc must be >= 0")
    e = spec.inclusion
    if e is not None:
        if e.radius_axial <= 0 or e.radius_lateral <= 0:
            raise GeometryError("ellipse radii must be positive")
        if (e.center_axial - e.radius_axial < 0 or e.center_axial + e.radius_axial > spec.n_axial - 1
                or e.center_lateral - e.radius_lateral < 0
                or e.center_lateral + e.radius_lateral > spec.n_lines - 1):
            raise GeometryError(f"inclusion {e} does not fit a {spec.n_lines}x{spec.n_axial} frame")


def simulate(spec: PhantomSpec) -> LabeledFrame:
    _check(spec)
    shape = (spec.n_lines, spec.n_axial)
    rng = np.random.default_rng(spec.rng_seed)
    cell = resolution_cell_samples(spec.fs, spec.f0, spec.fractional_bandwidth)
    # every draw happens regardless of geometry, so a fixed seed gives the
    # same speckle for any inclusion parameters
    counts_bg = rng.poisson(spec.scatterer_density_bg / cell, size=shape)
    counts_inc = rng.poisson(spec.scatterer_density_inc / cell, size=shape)
    z = rng.standard_normal(shape)

    if spec.inclusion is not None:
        mask = spec.inclusion.mask(*shape)
    else:
        mask = np.zeros(shape, dtype=np.uint8)
    inside = mask.astype(bool)
    counts = np.where(inside, counts_inc, counts_bg)
    gain = np.where(inside, spec.amplitude * spec.amplitude_ratio_inc, spec.amplitude)
    reflectivity = gain * np.sqrt(counts) * z

    rf = convolve1d(reflectivity, pulse(spec.fs, spec.f0, spec.fractional_bandwidth),
                    axis=1, mode="constant")
    if spec.lateral_blur and spec.n_lines > 2:
        rf = convolve1d(rf, np.array([0.25, 0.5, 0.25]), axis=0, mode="constant")
    frame = RfFrame(rf, fs=spec.fs, f0=spec.f0, sound_speed=spec.sound_speed)
    return LabeledFrame(frame, mask, spec=spec)


@dataclass(frozen=True)
class PhantomRanges:
    """Sampling ranges for :func:`make_dataset`; every range is ``(low, high)``."""
    n_lines: int = 64
    n_axial: int = 512
    fs: float = 40e6
    f0: float = 9e6
    radius_axial: tuple[float, float] = (50.0, 130.0)
    radius_lateral: tuple[float, float] = (8.0, 18.0)
    density_bg: tuple[float, float] = (8.0, 15.0)
    density_inc: tuple[float, float] = (0.2, 2.0)
    amplitude_ratio_inc: tuple[float, float] = (0.6, 1.4)
    malignant_below: float = 1.0
    extra: dict = field(default_factory=dict)

    def check(self):
        for name in ("radius_axial", "radius_lateral", "density_bg", "density_inc",
                     "amplitude_ratio_inc"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ParameterError(f"empty range for {name}: ({lo}, {hi})")
        if self.radius_axial[0] <= 0 or self.radius_lateral[0] <= 0:
            raise ParameterError("radii must be positive")
        if 2 * self.radius_axial[1] > self.n_axial - 1 or 2 * self.radius_lateral[1] > self.n_lines - 1:
            raise ParameterError("largest inclusion does not fit the frame")


def _case_specs(case_index, ranges: PhantomRanges, rng_seed):
    rng = np.random.default_rng([rng_seed, case_index])

    def draw(r):
        return float(rng.uniform(r[0], r[1]))

    density_bg = draw(ranges.density_bg)
    density_inc = draw(ranges.density_inc)
    ratio = draw(ranges.amplitude_ratio_inc)
    ra = draw(ranges.radius_axial)
    specs = []
    for scan in range(2):
        # the perpendicular scan sees the same depth extent and a fresh lateral cross-section
        rl = draw(ranges.radius_lateral)
        ca = float(rng.uniform(ra, ranges.n_axial - 1 - ra))
        cl = float(rng.uniform(rl, ranges.n_lines - 1 - rl))
        specs.append(PhantomSpec(
            n_lines=ranges.n_lines, n_axial=ranges.n_axial, fs=ranges.fs, f0=ranges.f0,
            scatterer_density_bg=density_bg, scatterer_density_inc=density_inc,
            amplitude_ratio_inc=ratio, inclusion=Ellipse(ca, cl, ra, rl),
            rng_seed=int(rng.integers(0, 2 ** 63 - 1)), **ranges.extra))
    return specs


def case_label(spec: PhantomSpec, ranges: PhantomRanges):
    return LABELS[1] if spec.amplitude_ratio_inc < ranges.malignant_below else LABELS[0]


def make_dataset(n_cases: int, ranges: PhantomRanges | None = None, rng_seed: int = 0):
    """Two frames (perpendicular scans) per case; case RNG streams come from ``(seed, case)``."""
    ranges = ranges or PhantomRanges()
    if n_cases < 1:
        raise ParameterError("n_cases must be >= 1")
    ranges.check()
    frames = []
    for case in range(n_cases):
        for spec in _case_specs(case, ranges, rng_seed):
            lf = simulate(spec)
            lf.case_id = case
            lf.label = case_label(spec, ranges)
            frames.append(lf)
    return frames


def write_dataset(frames, out_dir, rf_dtype="float32"):
    """Write QRF1 + mask PGM pairs and a ``manifest.json`` index; returns the manifest entries."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    per_case = {}
    for lf in frames:
        k = per_case.get(lf.case_id, 0)
        per_case[lf.case_id] = k + 1
        stem = f"case{lf.case_id:04d}_scan{k}"
        write_rf(out / f"{stem}.qrf", lf.rf, dtype=rf_dtype)
        save_mask(out / f"{stem}_mask.pgm", lf.truth_mask)
        entries.append({"rf_path": f"{stem}.qrf", "mask_path": f"{stem}_mask.pgm",
                        "label": lf.label, "case_id": lf.case_id})
    (out / "manifest.json").write_text(json.dumps(entries, indent=1) + "\n")
    return entries

