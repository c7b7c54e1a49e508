"""Command-line entry point: ``qusseg {simulate,bmode,entropy,train,eval,stats}``.

Exit codes: 0 success, 2 usage or input error, 1 internal error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .entropy import WindowSpec, entropy_map, window_from_wavelengths, write_entropy_map
from .errors import ConfigError, FormatError, ParameterError, QusError
from .imageio import save_gray, save_map_png
from .metrics import MetricsReport, augment_hflip, wilcoxon_rank_sum
from .nn.optim import TrainConfig
from .nn.train import train, write_history
from .nn.unet import AttentionUNet, NetworkConfig
from .nn.weights import VGG19_MAPPING, import_weights, load_weights
from .phantom import PhantomRanges, make_dataset, write_dataset
from .pipeline import (InputSpec, cached_inputs, load_manifest, load_masks, load_model, parse_pair,
                       run_manifest, save_model, score, split_cases)
from .rf import envelope, log_compress, read_rf

log = logging.getLogger("qusseg")

DEFAULTS = {
    "net.depth": 4,
    "net.base_channels": 16,
    "net.input_size": 224,
    "net.use_attention": True,
    "net.use_matching_layer": True,
    "net.batchnorm": True,
    "train.lr": 5e-4,
    "train.beta1": 0.9,
    "train.batch_size": 16,
    "train.lr_drop_factor": 0.5,
    "train.lr_patience_epochs": 4,
    "train.early_stop_epochs": 20,
    "train.max_epochs": 200,
    "train.seed": 0,
    "train.augment_hflip": True,
    "train.freeze_imported": False,
    "split.seed": 0,
    "split.fractions": [0.55, 0.15, 0.30],
    "input.mode": "entropy",
    "bmode.dynamic_range_db": 50.0,
    "entropy.window": "100x14",
    "entropy.stride": "1x1",
    "entropy.bins": 64,
    "eval.threshold": 0.5,
    "eval.disk_radius": 3,
    "eval.per_mass": False,
}


class UsageError(QusError):
    pass


def _coerce(key, value):
    default = DEFAULTS[key]
    if isinstance(value, str) and not isinstance(default, str):
        try:
            value = json.loads(value)
        except json.JSONDecodeError:
            raise ConfigError(f"cannot parse {key}={value!r}") from None
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be true/false")
    elif isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not float(value).is_integer():
            raise ConfigError(f"{key} must be an integer")
        value = int(value)
    elif isinstance(default, float):
        value = float(value)
    return value


def resolve_config(config_file=None, overrides=(), base=None):
    """Defaults (or ``base``), then the JSON file (flat dotted keys), then ``key=value`` overrides."""
    cfg = dict(DEFAULTS)
    for k, v in (base or {}).items():
        if k in DEFAULTS:
            cfg[k] = _coerce(k, v)
    if config_file:
        try:
            data = json.loads(Path(config_file).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {config_file}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        for k, v in data.items():
            if k not in DEFAULTS:
                raise ConfigError(f"unknown config key {k!r}")
            cfg[k] = _coerce(k, v)
    for item in overrides:
        k, sep, v = item.partition("=")
        if not sep or k not in DEFAULTS:
            raise ConfigError(f"bad override {item!r}")
        cfg[k] = _coerce(k, v)
    return cfg


def network_config(cfg):
    s = cfg["net.input_size"]
    return NetworkConfig(depth=cfg["net.depth"], base_channels=cfg["net.base_channels"], input_hw=(s, s),
                         use_attention=cfg["net.use_attention"],
                         use_matching_layer=cfg["net.use_matching_layer"], batchnorm=cfg["net.batchnorm"])


def input_spec(cfg):
    return InputSpec(mode=cfg["input.mode"], size=cfg["net.input_size"],
                     dynamic_range_db=cfg["bmode.dynamic_range_db"],
                     window=parse_pair(cfg["entropy.window"], "entropy.window"),
                     stride=parse_pair(cfg["entropy.stride"], "entropy.stride"),
                     n_bins=cfg["entropy.bins"])


def _write_manifest(path, manifest):
    Path(path).write_text(json.dumps(manifest, indent=1, default=str) + "\n")


# -- commands -------------------------------------------------------------------

def cmd_simulate(args):
    if args.cases < 1:
        raise UsageError("--cases must be >= 1")
    t0 = time.perf_counter()
    ranges = PhantomRanges(n_lines=args.n_lines, n_axial=args.n_axial)
    if args.spec:
        try:
            overrides = json.loads(Path(args.spec).read_text())
            ranges = PhantomRanges(**{**asdict(ranges), **overrides})
        except (OSError, json.JSONDecodeError, TypeError) as exc:
            raise ConfigError(f"invalid phantom spec {args.spec}: {exc}") from exc
    out = Path(args.output)
    frames = make_dataset(args.cases, ranges, args.seed)
    out.mkdir(parents=True, exist_ok=True)
    entries = write_dataset(frames, out)
    outputs = [out / "manifest.json"] + [out / e[k] for e in entries for k in ("rf_path", "mask_path")]
    _write_manifest(out / "run_manifest.json", run_manifest(
        "simulate", {"cases": args.cases, "ranges": asdict(ranges)}, [], outputs,
        {"seed": args.seed}, time.perf_counter() - t0))
    print(f"wrote {len(entries)} frames for {args.cases} cases to {out}")


def _stem(args, suffix):
    if args.output:
        return Path(args.output).with_suffix("")
    rf = Path(args.rf)
    return rf.with_name(rf.stem + suffix)


def cmd_bmode(args):
    t0 = time.perf_counter()
    frame = read_rf(args.rf)
    img = log_compress(envelope(frame), args.dr)
    stem = _stem(args, "_bmode")
    outputs = [stem.with_suffix(".pgm"), stem.with_suffix(".png")]
    for p in outputs:
        save_gray(p, img.pixels)
    _write_manifest(stem.with_suffix(".manifest.json"), run_manifest(
        "bmode", {"dynamic_range_db": args.dr}, [args.rf], outputs, {}, time.perf_counter() - t0))
    print(f"B-mode {img.pixels.shape[1]}x{img.pixels.shape[0]} at {args.dr:g} dB -> {outputs[0]}")


def cmd_entropy(args):
    t0 = time.perf_counter()
    frame = read_rf(args.rf, line_pitch=args.line_pitch)
    stride_ax, stride_lat = parse_pair(args.stride, "--stride")
    if args.wavelengths is not None:
        window = window_from_wavelengths(args.wavelengths, frame, lateral_lines=args.lateral,
                                         stride_axial=stride_ax, stride_lateral=stride_lat, n_bins=args.bins)
    else:
        ax, lat = parse_pair(args.window, "--window")
        window = WindowSpec(ax, lat, stride_ax, stride_lat, args.bins)
    if window.n_bins < 2:
        raise ParameterError("--bins must be >= 2")
    emap = entropy_map(envelope(frame), window)
    stem = _stem(args, "_entropy")
    outputs = [stem.with_suffix(".qem"), stem.with_suffix(".png")]
    write_entropy_map(outputs[0], emap)
    save_map_png(outputs[1], emap.values, args.colormap)
    _write_manifest(stem.with_suffix(".manifest.json"), run_manifest(
        "entropy", {"window": asdict(window), "colormap": args.colormap}, [args.rf], outputs, {},
        time.perf_counter() - t0))
    print(f"entropy map {emap.shape[0]}x{emap.shape[1]} (lines x depth), "
          f"mean {emap.values.mean():.4f} nats -> {outputs[0]}")


def _overrides(args):
    items = list(args.set or [])
    for flag, key in (("epochs", "train.max_epochs"), ("seed", "train.seed"), ("depth", "net.depth"),
                      ("base_channels", "net.base_channels"), ("size", "net.input_size"),
                      ("batch_size", "train.batch_size"), ("lr", "train.lr"), ("mode", "input.mode"),
                      ("split_seed", "split.seed")):
        value = getattr(args, flag, None)
        if value is not None:
            items.append(f"{key}={json.dumps(value) if not isinstance(value, str) else value}")
    return items


def _cache_dir(args, manifest):
    return Path(args.cache_dir) if args.cache_dir else Path(manifest).parent / ".qus_cache"


def cmd_train(args):
    t0 = time.perf_counter()
    cfg = resolve_config(args.config, _overrides(args))
    net_cfg = network_config(cfg)
    spec = input_spec(cfg)
    tcfg = TrainConfig(lr=cfg["train.lr"], beta1=cfg["train.beta1"], batch_size=cfg["train.batch_size"],
                       lr_drop_factor=cfg["train.lr_drop_factor"],
                       lr_patience_epochs=cfg["train.lr_patience_epochs"],
                       early_stop_epochs=cfg["train.early_stop_epochs"], max_epochs=cfg["train.max_epochs"],
                       rng_seed=cfg["train.seed"],
                       frozen=("enc0.", "enc1.") if cfg["train.freeze_imported"] else ())
    cases = load_manifest(args.manifest)
    train_cases, val_cases, _ = split_cases(cases, tuple(cfg["split.fractions"]), cfg["split.seed"])
    cache = _cache_dir(args, args.manifest)

    def pairs(subset):
        return list(zip(cached_inputs(subset, spec, cache), load_masks(subset, spec.size)))

    train_pairs, val_pairs = pairs(train_cases), pairs(val_cases)
    if cfg["train.augment_hflip"]:
        train_pairs = augment_hflip(train_pairs)

    net = AttentionUNet(net_cfg, rng=np.random.default_rng(cfg["train.seed"]))
    if args.import_weights:
        mapping = VGG19_MAPPING
        if args.import_mapping:
            mapping = json.loads(Path(args.import_mapping).read_text())
        net.params = import_weights(net.params, load_weights(args.import_weights), mapping)

    best, history = train(train_pairs, val_pairs, net_cfg, tcfg, net=net)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    outputs = [out / "weights.qwt", out / "history.csv"]
    save_model(outputs[0], best)
    write_history(outputs[1], history)
    _write_manifest(out / "run_manifest.json", run_manifest(
        "train", cfg, [args.manifest] + ([args.import_weights] if args.import_weights else []), outputs,
        {"train.seed": cfg["train.seed"], "split.seed": cfg["split.seed"]}, time.perf_counter() - t0))
    best_dice = max(r["val_dice"] for r in history)
    print(f"trained {len(history)} epochs on {len(train_pairs)} inputs, best val Dice {best_dice:.4f} -> {out}")


def cmd_eval(args):
    t0 = time.perf_counter()
    if not args.oracle and not args.weights:
        raise UsageError("pass --weights or --oracle")
    config_file = args.config
    train_cfg = {}
    if args.weights:
        if not Path(args.weights).is_file():
            raise UsageError(f"weights file {args.weights} not found")
        sibling = Path(args.weights).with_name("run_manifest.json")
        if sibling.is_file():
            train_cfg = json.loads(sibling.read_text()).get("config", {})
    cfg = resolve_config(config_file, _overrides(args), base=train_cfg)
    if args.no_morph:
        cfg["eval.disk_radius"] = 0
    if args.threshold is not None:
        cfg["eval.threshold"] = args.threshold
    spec = input_spec(cfg)
    cases = load_manifest(args.manifest)
    if args.split == "all":
        subset = cases
    else:
        parts = split_cases(cases, tuple(cfg["split.fractions"]), cfg["split.seed"])
        subset = dict(zip(("train", "val", "test"), parts))[args.split]
    if not subset:
        raise UsageError(f"split {args.split!r} is empty")
    if args.oracle:
        probs = load_masks(subset, spec.size)
        report = score(None, None, subset, spec.size, cfg["eval.threshold"], cfg["eval.disk_radius"],
                       per_mass=cfg["eval.per_mass"], probs=probs)
    else:
        net = load_model(args.weights, network_config(cfg))
        images = cached_inputs(subset, spec, _cache_dir(args, args.manifest))
        report = score(net, images, subset, spec.size, cfg["eval.threshold"], cfg["eval.disk_radius"],
                       per_mass=cfg["eval.per_mass"])
    labels = sorted({c.label for c in subset})
    if len(labels) == 2:
        report = _with_comparison(report, labels)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    outputs = [out / "report.json", out / "report.txt"]
    outputs[0].write_text(report.to_json() + "\n")
    title = "oracle" if args.oracle else cfg["input.mode"]
    table = report.table(title)
    outputs[1].write_text(table + "\n")
    _write_manifest(out / "run_manifest.json", run_manifest(
        "eval", cfg, [args.manifest] + ([args.weights] if args.weights else []), outputs,
        {"split.seed": cfg["split.seed"]}, time.perf_counter() - t0))
    print(table)


def _with_comparison(report, labels):
    xa, xb = report.dice_scores(labels[0]), report.dice_scores(labels[1])
    res = wilcoxon_rank_sum(xa, xb)
    report.wilcoxon = {"a": labels[0], "b": labels[1], "u": res.u, "p": res.p_two_sided, "method": res.method}
    return report


def _load_report(path):
    try:
        report = MetricsReport.from_dict(json.loads(Path(path).read_text()))
        scores = [float(c["dice"]) for c in report.per_case]
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed report {path}: {exc}") from exc
    if not scores:
        raise FormatError(f"report {path} has no cases")
    return report


def cmd_stats(args):
    t0 = time.perf_counter()
    ra, rb = _load_report(args.report_a), _load_report(args.report_b)
    xa, xb = ra.dice_scores(args.group), rb.dice_scores(args.group)
    if not xa or not xb:
        raise FormatError(f"group {args.group!r} is empty in one of the reports")
    res = wilcoxon_rank_sum(xa, xb)
    verdict = "significant" if res.p_two_sided < args.alpha else "not significant"
    result = {"u": res.u, "p": res.p_two_sided, "method": res.method, "alpha": args.alpha,
              "significant": res.p_two_sided < args.alpha, "n_a": len(xa), "n_b": len(xb),
              "mean_dice_a": float(np.mean(xa)), "mean_dice_b": float(np.mean(xb))}
    print(f"U = {res.u:g}, p = {res.p_two_sided:.4g} ({res.method}); {verdict} at alpha = {args.alpha:g}")
    if args.output:
        out = Path(args.output)
        out.write_text(json.dumps(result, indent=1) + "\n")
        _write_manifest(out.with_suffix(".manifest.json"), run_manifest(
            "stats", {"alpha": args.alpha, "group": args.group}, [args.report_a, args.report_b], [out], {},
            time.perf_counter() - t0))
    return result


# -- argument parsing -------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="qusseg", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate a labelled phantom dataset")
    s.add_argument("--cases", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--n-lines", type=int, default=64)
    s.add_argument("--n-axial", type=int, default=512)
    s.add_argument("--spec", help="JSON object overriding phantom sampling ranges")
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("bmode", help="reconstruct an 8-bit B-mode image")
    s.add_argument("rf")
    s.add_argument("--dr", type=float, default=50.0, help="dynamic range in dB")
    s.add_argument("-o", "--output", help="output stem; .pgm and .png are written")
    s.set_defaults(func=cmd_bmode)

    s = sub.add_parser("entropy", help="compute a sliding-window entropy map")
    s.add_argument("rf")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--window", default="100x14", help="axial x lateral window size")
    g.add_argument("--wavelengths", type=float, help="derive the window from this many wavelengths")
    s.add_argument("--lateral", type=int, help="lateral lines when deriving from wavelengths")
    s.add_argument("--line-pitch", type=float, help="lateral line spacing in metres")
    s.add_argument("--stride", default="1x1", help="axial x lateral hop")
    s.add_argument("--bins", type=int, default=64)
    s.add_argument("--colormap", default="viridis", choices=["viridis", "gray"])
    s.add_argument("-o", "--output", help="output stem; .qem and .png are written")
    s.set_defaults(func=cmd_entropy)

    def common_training(s):
        s.add_argument("manifest")
        s.add_argument("--config", help="JSON file with flat dotted keys")
        s.add_argument("--set", action="append", metavar="KEY=VALUE")
        s.add_argument("--mode", choices=["us", "entropy"])
        s.add_argument("--epochs", type=int)
        s.add_argument("--seed", type=int)
        s.add_argument("--split-seed", type=int)
        s.add_argument("--depth", type=int)
        s.add_argument("--base-channels", type=int)
        s.add_argument("--size", type=int)
        s.add_argument("--batch-size", type=int)
        s.add_argument("--lr", type=float)
        s.add_argument("--cache-dir")
        s.add_argument("-o", "--output", required=True)

    s = sub.add_parser("train", help="train an attention U-Net")
    common_training(s)
    s.add_argument("--import-weights", help="QWT1 file for the first two encoder levels")
    s.add_argument("--import-mapping", help="JSON {file tensor: parameter} mapping")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="score a trained model on a split")
    common_training(s)
    s.add_argument("--weights")
    s.add_argument("--oracle", action="store_true", help="score ground-truth masks as predictions")
    s.add_argument("--split", default="test", choices=["train", "val", "test", "all"])
    s.add_argument("--no-morph", action="store_true", help="skip the disk closing")
    s.add_argument("--threshold", type=float)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("stats", help="rank-sum comparison of two reports' Dice scores")
    s.add_argument("report_a")
    s.add_argument("report_b")
    s.add_argument("--alpha", type=float, default=0.05)
    s.add_argument("--group", default="all")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_stats)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (QusError, OSError) as exc:
        print(f"qusseg {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"qusseg {args.command}: internal error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
