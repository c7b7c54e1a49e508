"""Overlap scores, post-processing, splitting, augmentation and rank-sum statistics."""
from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from itertools import accumulate

import numpy as np
from scipy import ndimage
from scipy.stats import rankdata

from .errors import ParameterError, ShapeError


def _pair(a, b):
    a = np.asarray(a).astype(bool)
    b = np.asarray(b).astype(bool)
    if a.shape != b.shape:
        raise ShapeError(f"mask shapes differ: {a.shape} vs {b.shape}")
    return a, b


def dice(a, b) -> float:
    """``2|a & b| / (|a| + |b|)``; two empty masks score 1."""
    a, b = _pair(a, b)
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / total


def jaccard(a, b) -> float:
    a, b = _pair(a, b)
    union = int(np.logical_or(a, b).sum())
    if union == 0:
        return 1.0
    return int(np.logical_and(a, b).sum()) / union


def threshold(pred, tau: float = 0.5):
    if not 0.0 <= tau <= 1.0:
        raise ParameterError(f"threshold must lie in [0, 1], got {tau}")
    return (np.asarray(pred) >= tau).astype(np.uint8)


def disk(radius: int):
    r = int(radius)
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    return (xx * xx + yy * yy) <= r * r


def morph_close(mask, disk_radius: int = 3):
    """Dilation then erosion by a discrete disk.

    The mask is zero-extended by the radius before both steps and cropped
    afterwards, so the result always contains the input.
    """
    if disk_radius < 0:
        raise ParameterError("disk radius must be >= 0")
    m = np.asarray(mask).astype(bool)
    if disk_radius == 0:
        return m.astype(np.uint8)
    r = int(disk_radius)
    se = disk(r)
    padded = np.pad(m, r)
    closed = ndimage.binary_erosion(ndimage.binary_dilation(padded, se), se)
    return closed[r:-r, r:-r].astype(np.uint8)


def postprocess(prob, tau: float = 0.5, disk_radius: int | None = 3):
    mask = threshold(prob, tau)
    if disk_radius:
        mask = morph_close(mask, disk_radius)
    return mask


# -- rank-sum test -------------------------------------------------------------

@dataclass(frozen=True)
class RankSumResult:
    u: float
    p_two_sided: float
    method: str


def _u_frequencies(n1, n2):
    """Counts of each U value over all C(n1+n2, n1) tie-free arrangements."""
    # f[i][j] holds the U distribution for i x-values and j y-values
    f = [[None] * (n2 + 1) for _ in range(n1 + 1)]
    for i in range(n1 + 1):
        for j in range(n2 + 1):
            if i == 0 or j == 0:
                f[i][j] = np.array([1], dtype=object)
                continue
            # the largest observation is either an x (beats all j y's) or a y
            a = np.concatenate([np.zeros(j, dtype=object), f[i - 1][j]])
            b = f[i][j - 1]
            size = max(len(a), len(b))
            out = np.zeros(size, dtype=object)
            out[:len(a)] += a
            out[:len(b)] += b
            f[i][j] = out
    return f[n1][n2]


def wilcoxon_rank_sum(x, y, method: str = "auto") -> RankSumResult:
    """Mann-Whitney U for ``x`` and two-sided p-value.

    ``method="auto"`` uses the exact null distribution when the pooled size is
    at most 12 and there are no ties, otherwise the tie-corrected normal
    approximation with continuity correction.
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    n1, n2 = x.size, y.size
    if n1 < 1 or n2 < 1:
        raise ParameterError("both samples need at least one value")
    pooled = np.concatenate([x, y])
    ranks = rankdata(pooled)
    u = float(ranks[:n1].sum() - n1 * (n1 + 1) / 2.0)
    _, tie_counts = np.unique(pooled, return_counts=True)
    has_ties = bool(np.any(tie_counts > 1))
    if method == "auto":
        method = "exact" if (n1 + n2 <= 12 and not has_ties) else "normal"
    if method == "exact":
        if has_ties:
            raise ParameterError("exact distribution assumes no ties")
        freq = _u_frequencies(n1, n2)
        total = math.comb(n1 + n2, n1)
        k = int(round(u))
        lower = sum(freq[:k + 1]) / total
        upper = sum(freq[k:]) / total
        p = min(1.0, 2.0 * min(lower, upper))
    elif method == "normal":
        n = n1 + n2
        mu = n1 * n2 / 2.0
        tie_term = float(np.sum(tie_counts ** 3 - tie_counts))
        var = n1 * n2 / 12.0 * ((n + 1) - (tie_term / (n * (n - 1)) if n > 1 else 0.0))
        if var <= 0:
            p = 1.0
        else:
            z = max(0.0, abs(u - mu) - 0.5) / math.sqrt(var)
            p = min(1.0, math.erfc(z / math.sqrt(2.0)))
    else:
        raise ParameterError(f"unknown method {method!r}")
    return RankSumResult(u, float(p), method)


# -- dataset handling ----------------------------------------------------------

def _held_out_sizes(n, fractions):
    # held-out sets round up and training takes the remainder; this yields
    # 147/41/81 for 123 + 146 cases at 55/15/30
    val = math.ceil(n * fractions[1] - 1e-9)
    test = math.ceil(n * fractions[2] - 1e-9)
    return n - val - test, val, test


def split_dataset(cases, fractions=(0.55, 0.15, 0.30), seed: int = 0):
    """Stratified case-level split into (train, val, test).

    ``cases`` is a sequence of ``(case_id, label)`` pairs (extra tuple
    elements are carried along). Cases are sorted by id before the seeded
    shuffle, so the result does not depend on input order.
    """
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
        raise ParameterError(f"fractions must be three nonnegative numbers summing to 1, got {fractions}")
    by_label = defaultdict(list)
    for case in cases:
        by_label[case[1]].append(case)
    if not by_label:
        raise ParameterError("no cases to split")
    rng = np.random.default_rng(seed)
    parts = ([], [], [])
    for label in sorted(by_label):
        group = sorted(by_label[label], key=lambda c: c[0])
        sizes = _held_out_sizes(len(group), fractions)
        if min(sizes) < 1 and all(f > 0 for f in fractions):
            raise ParameterError(f"label {label!r} has {len(group)} cases, too few for three sets")
        order = rng.permutation(len(group))
        bounds = [0, *accumulate(sizes)]
        for k in range(3):
            parts[k].extend(group[i] for i in order[bounds[k]:bounds[k + 1]])
    return tuple(sorted(p, key=lambda c: c[0]) for p in parts)


def augment_hflip(pairs):
    """Originals followed by horizontally mirrored copies (last axis reversed)."""
    pairs = list(pairs)
    flipped = [(np.flip(img, axis=-1).copy(), np.flip(mask, axis=-1).copy()) for img, mask in pairs]
    return pairs + flipped


# -- reporting -----------------------------------------------------------------

@dataclass
class GroupStats:
    n: int
    mean: float
    median: float
    std: float


def _stats(values):
    v = np.asarray(values, dtype=float)
    std = float(v.std(ddof=1)) if v.size > 1 else 0.0
    return GroupStats(int(v.size), float(v.mean()), float(np.median(v)), std)


@dataclass
class MetricsReport:
    per_case: list
    groups: dict = field(default_factory=dict)
    wilcoxon: dict | None = None

    @property
    def wilcoxon_p(self):
        return None if self.wilcoxon is None else self.wilcoxon["p"]

    def dice_scores(self, group="all"):
        return [c["dice"] for c in self.per_case if group == "all" or c["label"] == group]

    def to_dict(self):
        return {"per_case": self.per_case,
                "groups": {g: {s: asdict(v) for s, v in scores.items()} for g, scores in self.groups.items()},
                "wilcoxon": self.wilcoxon}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, d):
        groups = {g: {s: GroupStats(**v) for s, v in scores.items()} for g, scores in d.get("groups", {}).items()}
        return cls(list(d["per_case"]), groups, d.get("wilcoxon"))

    def table(self, title="model"):
        """Plain-text table: one row per score, ``mean (median +/- std)`` per group."""
        names = list(self.groups)
        head = ["Score", "Method"] + names
        rows = []
        for score in ("dice", "jaccard"):
            cells = [score.capitalize(), title]
            for g in names:
                s = self.groups[g][score]
                cells.append(f"{s.mean:.2f} ({s.median:.2f}+/-{s.std:.2f})")
            rows.append(cells)
        widths = [max(len(r[i]) for r in [head] + rows) for i in range(len(head))]
        fmt = lambda r: " | ".join(c.ljust(w) for c, w in zip(r, widths))  # noqa: E731
        lines = [fmt(head), "-+-".join("-" * w for w in widths)] + [fmt(r) for r in rows]
        if self.wilcoxon:
            w = self.wilcoxon
            lines.append(f"rank-sum {w['a']} vs {w['b']}: U={w['u']:.1f} p={w['p']:.4g}")
        return "\n".join(lines)


def evaluate(preds, truths, labels, case_ids=None, compare=None, per_mass=False):
    """Score aligned prediction/truth masks and aggregate per label and overall.

    Groups without cases are left out. ``compare=(label_a, label_b)`` adds a
    rank-sum comparison of the two groups' Dice scores. With ``per_mass``,
    frames sharing a case id are averaged into one score first.
    """
    preds, truths, labels = list(preds), list(truths), list(labels)
    if not (len(preds) == len(truths) == len(labels)):
        raise ParameterError("preds, truths and labels must have equal lengths")
    if case_ids is None:
        case_ids = list(range(len(preds)))
    elif len(case_ids) != len(preds):
        raise ParameterError("case_ids must align with predictions")
    per_case = []
    for cid, p, t, lab in zip(case_ids, preds, truths, labels):
        per_case.append({"case_id": cid, "label": lab, "dice": dice(p, t), "jaccard": jaccard(p, t)})
    if per_mass:
        merged = {}
        for row in per_case:
            merged.setdefault(row["case_id"], []).append(row)
        per_case = [{"case_id": cid, "label": rows[0]["label"],
                     "dice": float(np.mean([r["dice"] for r in rows])),
                     "jaccard": float(np.mean([r["jaccard"] for r in rows]))}
                    for cid, rows in merged.items()]
    groups = {}
    for g in sorted({r["label"] for r in per_case}) + ["all"]:
        rows = [r for r in per_case if g == "all" or r["label"] == g]
        if rows:
            groups[g] = {s: _stats([r[s] for r in rows]) for s in ("dice", "jaccard")}
    report = MetricsReport(per_case, groups)
    if compare is not None:
        a, b = compare
        xa, xb = report.dice_scores(a), report.dice_scores(b)
        if xa and xb:
            res = wilcoxon_rank_sum(xa, xb)
            report.wilcoxon = {"a": a, "b": b, "u": res.u, "p": res.p_two_sided, "method": res.method}
    return report
