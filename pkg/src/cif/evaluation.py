"""Rank-based evaluation: image/pixel AUROC and AUPRO."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.ndimage import label
from scipy.stats import rankdata

from .errors import LengthMismatch, NoAnomalousPixels, ShapeMismatch, SingleClass

_EIGHT = np.ones((3, 3), dtype=int)


@dataclass
class EvalReport:
    class_name: str
    i_auroc: float
    p_auroc: float
    aupro: float
    n_test: int
    fpr_limit: float = 0.3

    def as_dict(self):
        return asdict(self)


def auroc(scores, labels) -> float:
    """Mann-Whitney AUROC with midrank ties."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel().astype(bool)
    if scores.shape != labels.shape:
        raise LengthMismatch(f"{scores.size} scores for {labels.size} labels")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("AUROC needs both classes")
    ranks = rankdata(scores)  # average ranks for ties
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def pro_curve(pixel_maps, gt_masks, max_thresholds: int | None = 512):
    """(fpr, pro) arrays for thresholds in decreasing order, prefixed with (0, 0).

    A pixel is predicted anomalous when its score is >= the threshold. With
    more distinct scores than `max_thresholds`, thresholds are quantile-spaced
    over the distinct scores (always including min and max); otherwise every
    distinct score is used.
    """
    maps = [np.asarray(m, dtype=np.float64) for m in pixel_maps]
    gts = [np.asarray(g).astype(bool) for g in gt_masks]
    if len(maps) != len(gts):
        raise LengthMismatch("one ground-truth mask per map required")
    for m, g in zip(maps, gts):
        if m.shape != g.shape:
            raise ShapeMismatch(f"map {m.shape} vs mask {g.shape}")

    negatives = np.sort(np.concatenate([m[~g] for m, g in zip(maps, gts)]))
    regions = []
    for m, g in zip(maps, gts):
        lab, n = label(g, structure=_EIGHT)
        for r in range(1, n + 1):
            regions.append(np.sort(m[lab == r]))
    if not regions:
        raise NoAnomalousPixels("no anomalous ground-truth region")

    distinct = np.unique(np.concatenate([m.ravel() for m in maps]))
    if max_thresholds is not None and distinct.size > max_thresholds:
        q = np.linspace(0.0, 1.0, max_thresholds)
        thresholds = np.unique(np.quantile(distinct, q, method="nearest"))
    else:
        thresholds = distinct
    thresholds = thresholds[::-1]

    def frac_at_least(sorted_vals):
        return 1.0 - np.searchsorted(sorted_vals, thresholds, side="left") / sorted_vals.size

    fpr = frac_at_least(negatives) if negatives.size else np.zeros_like(thresholds)
    pro = np.mean([frac_at_least(r) for r in regions], axis=0)
    return np.concatenate([[0.0], fpr]), np.concatenate([[0.0], pro])


def area_to_limit(x, y, limit) -> float:
    """Trapezoid area of the monotone curve (x, y) over [0, limit], linearly
    interpolating at the limit."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    inside = x <= limit
    xs, ys = x[inside], y[inside]
    if xs[-1] < limit and inside.sum() < x.size:
        j = int(np.argmax(~inside))  # first point beyond the limit
        x0, x1, y0, y1 = x[j - 1], x[j], y[j - 1], y[j]
        y_lim = y0 + (y1 - y0) * (limit - x0) / (x1 - x0)
        xs = np.append(xs, limit)
        ys = np.append(ys, y_lim)
    return float(np.sum((xs[1:] - xs[:-1]) * (ys[1:] + ys[:-1]) / 2.0))


def aupro(pixel_maps, gt_masks, fpr_limit: float = 0.3, max_thresholds: int | None = 512) -> float:
    """Area under the per-region-overlap curve up to `fpr_limit`, normalized to [0, 1]."""
    fpr, pro = pro_curve(pixel_maps, gt_masks, max_thresholds)
    return area_to_limit(fpr, pro, fpr_limit) / fpr_limit


def evaluate_run(image_scores, labels, pixel_maps, gt_masks, class_name="",
                 fpr_limit: float = 0.3) -> EvalReport:
    """Image AUROC, pixel AUROC and AUPRO for one class."""
    labels = np.asarray(labels).astype(int)
    pix = np.concatenate([np.asarray(m, dtype=np.float64).ravel() for m in pixel_maps])
    pix_lab = np.concatenate([np.asarray(g).astype(bool).ravel() for g in gt_masks])
    return EvalReport(
        class_name=class_name,
        i_auroc=auroc(image_scores, labels),
        p_auroc=auroc(pix, pix_lab),
        aupro=aupro(pixel_maps, gt_masks, fpr_limit),
        n_test=len(labels),
        fpr_limit=fpr_limit,
    )
