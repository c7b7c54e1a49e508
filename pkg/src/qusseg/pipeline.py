"""Dataset-level glue: manifests, derived network inputs, caching and model files."""
from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .entropy import WindowSpec, align_to_frame, entropy_map, resize_bilinear, resize_nearest
from .errors import FormatError, ParameterError, WeightImportError
from .imageio import load_mask
from .metrics import evaluate, postprocess, split_dataset
from .nn.train import predict
from .nn.unet import AttentionUNet, NetworkConfig
from .nn.weights import import_weights, load_weights, save_weights
from .rf import bmode, envelope, parse_rf

MODES = ("us", "entropy")


@dataclass(frozen=True)
class Case:
    rf_path: Path
    mask_path: Path
    label: str
    case_id: int


def load_manifest(path):
    path = Path(path)
    try:
        entries = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read manifest {path}: {exc}") from exc
    if not isinstance(entries, list) or not entries:
        raise FormatError(f"manifest {path} must be a non-empty JSON array")
    cases = []
    for i, e in enumerate(entries):
        try:
            cases.append(Case(path.parent / e["rf_path"], path.parent / e["mask_path"], str(e["label"]),
                              int(e.get("case_id", i))))
        except (KeyError, TypeError) as exc:
            raise FormatError(f"manifest entry {i} is malformed: {exc}") from exc
    return cases


def parse_pair(text, name="value"):
    """``"100x14"`` -> ``(100, 14)``."""
    try:
        a, b = (int(v) for v in str(text).lower().split("x"))
    except ValueError:
        raise ParameterError(f"{name} must look like AxB, got {text!r}") from None
    return a, b


@dataclass(frozen=True)
class InputSpec:
    """How a network input is derived from one RF file."""
    mode: str = "entropy"
    size: int = 224
    dynamic_range_db: float = 50.0
    window: tuple[int, int] = (100, 14)
    stride: tuple[int, int] = (1, 1)
    n_bins: int = 64

    def __post_init__(self):
        if self.mode not in MODES:
            raise ParameterError(f"mode must be one of {MODES}, got {self.mode!r}")

    def window_spec(self):
        return WindowSpec(self.window[0], self.window[1], self.stride[0], self.stride[1], self.n_bins)

    def key(self):
        if self.mode == "us":
            return {"mode": "us", "size": self.size, "dr": self.dynamic_range_db}
        return {"mode": "entropy", "size": self.size, "window": list(self.window),
                "stride": list(self.stride), "bins": self.n_bins}


def _standardize(raster):
    r = np.asarray(raster, dtype=float)
    sd = r.std()
    return (r - r.mean()) / sd if sd > 0 else r - r.mean()


def derive_input(rf_bytes: bytes, spec: InputSpec):
    """Network input raster (float32, ``size x size``), standardised per image."""
    frame = parse_rf(rf_bytes)
    if spec.mode == "us":
        raster = bmode(frame, spec.dynamic_range_db).pixels.astype(float)
    else:
        env = envelope(frame)
        raster = align_to_frame(entropy_map(env, spec.window_spec(), workers=1), env.shape)
    return _standardize(resize_bilinear(raster, spec.size, spec.size)).astype(np.float32)


def _threads():
    try:
        return max(1, int(os.environ.get("QUS_THREADS", "1")))
    except ValueError:
        return 1


def cached_inputs(cases, spec: InputSpec, cache_dir):
    """Derive (or load from the content-hash cache) one input per case."""
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)

    def one(case):
        data = Path(case.rf_path).read_bytes()
        path = cache_dir / _cache_name(data, spec)
        if path.exists():
            return np.load(path)
        arr = derive_input(data, spec)
        tmp = path.with_suffix(".tmp.npy")
        np.save(tmp, arr)
        os.replace(tmp, path)
        return arr

    n = _threads()
    if n > 1:
        with ThreadPoolExecutor(n) as pool:
            return list(pool.map(one, cases))
    return [one(c) for c in cases]


def _cache_name(rf_bytes, spec: InputSpec):
    h = hashlib.sha256(rf_bytes)
    h.update(json.dumps(spec.key(), sort_keys=True).encode())
    return f"{h.hexdigest()}.npy"


def cache_path(case, spec: InputSpec, cache_dir):
    return Path(cache_dir) / _cache_name(Path(case.rf_path).read_bytes(), spec)


def load_masks(cases, size):
    return [resize_nearest(load_mask(c.mask_path), size, size).astype(np.float32) for c in cases]


def split_cases(cases, fractions, seed):
    """Case-level split; both scans of a case land in the same set."""
    labels = {}
    for c in cases:
        labels.setdefault(c.case_id, c.label)
    train_ids, val_ids, test_ids = (
        {cid for cid, _ in part} for part in split_dataset(sorted(labels.items()), fractions, seed))
    pick = lambda ids: [c for c in cases if c.case_id in ids]  # noqa: E731
    return pick(train_ids), pick(val_ids), pick(test_ids)


def save_model(path, net: AttentionUNet):
    tensors = dict(net.params)
    tensors.update(net.buffers)
    save_weights(path, tensors)


def load_model(path, cfg: NetworkConfig):
    """Rebuild a network from a QWT1 file; shape mismatches raise ``WeightImportError``."""
    net = AttentionUNet(cfg)
    tensors = load_weights(path)
    target = dict(net.params)
    target.update(net.buffers)
    missing = sorted(set(target) - set(tensors))
    mapping = {k: k for k in tensors}
    merged = import_weights(target, tensors, mapping)
    if missing:
        raise WeightImportError("weights file lacks: " + ", ".join(missing), names=missing)
    net.params = {k: merged[k] for k in net.params}
    net.buffers = {k: merged[k] for k in net.buffers}
    return net


def score(net, images, cases, size, tau=0.5, disk_radius=3, compare=None, per_mass=False, probs=None):
    """Predict, binarise, close and score against the ground-truth masks."""
    truths = [m.astype(np.uint8) for m in load_masks(cases, size)]
    if probs is None:
        probs = predict(net, np.stack(images))
    preds = [postprocess(p, tau, disk_radius) for p in probs]
    return evaluate(preds, truths, [c.label for c in cases], [c.case_id for c in cases],
                    compare=compare, per_mass=per_mass)


def run_manifest(command, config, inputs, outputs, seeds, duration):
    return {"command": command, "config": config, "inputs": [str(p) for p in inputs],
            "outputs": [str(p) for p in outputs], "seeds": seeds, "version": __version__,
            "duration_s": round(duration, 3)}
