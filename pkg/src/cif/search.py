"""Hyperedge-guided memory search, score post-processing and the full
per-sample detection pipeline."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.spatial.distance import cdist

from .errors import EmptyBank, InvalidConfig, LengthMismatch, ShapeMismatch
from .feature_io import ForegroundMask, Modality, PatchGrid
from .hypergraph import (Hypergraph, SahcConfig, build_sahc,
                         cosine_sim_to_centers, hyperedge_features)
from .memory import MemoryBank
from .mpass import MpConfig, message_pass


class Combine(str, enum.Enum):
    MULTIPLY = "multiply"
    HGMS_ONLY = "hgms_only"
    GLOBAL_ONLY = "global_only"


class BackgroundPolicy(str, enum.Enum):
    ZERO = "zero"
    GLOBAL_ONLY = "global_only"


@dataclass
class SearchConfig:
    k_edges: int = 2
    combine: Combine = Combine.MULTIPLY
    background_policy: BackgroundPolicy = BackgroundPolicy.ZERO
    sigma: float = 4.0
    out_size: tuple[int, int] | None = None  # default: 8 pixels per patch (pipeline uses the sample's depth size)

    def __post_init__(self):
        self.combine = Combine(self.combine)
        self.background_policy = BackgroundPolicy(self.background_policy)
        if self.k_edges < 1:
            raise InvalidConfig("k_edges must be >= 1")
        if self.sigma < 0:
            raise InvalidConfig("sigma must be >= 0")
        if self.out_size is not None:
            self.out_size = tuple(int(v) for v in self.out_size)


@dataclass
class AnomalyResult:
    patch_scores: np.ndarray  # (rows, cols)
    pixel_scores: np.ndarray  # (h, w)
    image_score: float
    per_modality: dict = field(default_factory=dict)  # Modality -> (rows, cols) raw scores


def _check_bank(bank: MemoryBank):
    if bank.n_edges == 0 or any(len(b) == 0 for b in bank.buckets):
        raise EmptyBank("memory bank has an empty bucket")


def _fg(test_hg, foreground):
    if foreground is not None:
        return np.asarray(foreground, dtype=bool)
    return test_hg.foreground


def global_nn_scores(X_test_new, bank: MemoryBank, foreground=None) -> np.ndarray:
    """Distance from each node to its nearest bank node; background scores 0."""
    _check_bank(bank)
    X = np.asarray(X_test_new, dtype=np.float64)
    fg = np.ones(len(X), dtype=bool) if foreground is None else np.asarray(foreground, bool)
    out = np.zeros(len(X))
    if fg.any():
        out[fg] = cdist(X[fg], bank.nodes().astype(np.float64)).min(1)
    return out


def hgms_scores(X_test_new, test_hg: Hypergraph, bank: MemoryBank, k_edges: int = 2,
                background_policy=BackgroundPolicy.ZERO) -> np.ndarray:
    """Per-node score restricted to the buckets of the k bank hyperedges most
    cosine-similar to each test hyperedge. A node in several test hyperedges
    keeps its smallest score."""
    _check_bank(bank)
    if not 1 <= k_edges <= bank.n_edges:
        raise InvalidConfig(f"k_edges={k_edges} must lie in [1, {bank.n_edges}]")
    X = np.asarray(X_test_new, dtype=np.float64)
    fg = test_hg.foreground
    fg_idx = np.flatnonzero(fg)
    out = np.zeros(len(X))
    if fg_idx.size:
        H = test_hg.incidence[fg_idx]
        live = H.sum(0) > 0
        test_edges = np.zeros((H.shape[1], X.shape[1]))
        test_edges[live] = hyperedge_features(X[fg_idx], H[:, live])
        sim = cosine_sim_to_centers(test_edges, bank.edge_feats)
        ranked = np.argsort(-sim, axis=1, kind="stable")[:, :k_edges]
        best = np.full(fg_idx.size, np.inf)
        for i in np.flatnonzero(live):
            members = np.flatnonzero(H[:, i])
            subset = np.concatenate([bank.buckets[b] for b in ranked[i]]).astype(np.float64)
            d = cdist(X[fg_idx[members]], subset).min(1)
            best[members] = np.minimum(best[members], d)
        out[fg_idx] = best
    if BackgroundPolicy(background_policy) == BackgroundPolicy.GLOBAL_ONLY:
        bg = ~fg
        out[bg] = global_nn_scores(X, bank, bg)[bg]
    return out


def combine_scores(hgms, glob) -> np.ndarray:
    hgms = np.asarray(hgms, dtype=np.float64)
    glob = np.asarray(glob, dtype=np.float64)
    if hgms.shape != glob.shape:
        raise LengthMismatch(f"{hgms.shape} vs {glob.shape}")
    return hgms * glob


def _bilinear_weights(n_in, n_out):
    # half-pixel centers, edge clamped
    pos = np.clip((np.arange(n_out) + 0.5) * n_in / n_out - 0.5, 0, n_in - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    W = np.zeros((n_out, n_in))
    W[np.arange(n_out), lo] += 1 - frac
    W[np.arange(n_out), hi] += frac
    return W


def upsample_bilinear(patch_map, out_size) -> np.ndarray:
    P = np.asarray(patch_map, dtype=np.float64)
    h, w = out_size
    return _bilinear_weights(P.shape[0], h) @ P @ _bilinear_weights(P.shape[1], w).T


def postprocess(patch_scores, out_size, sigma: float = 4.0) -> np.ndarray:
    """Bilinear upsampling followed by a Gaussian blur (std `sigma` pixels,
    truncated at 4 sigma); sigma == 0 skips the blur."""
    if sigma < 0:
        raise InvalidConfig("sigma must be >= 0")
    up = upsample_bilinear(patch_scores, out_size)
    if sigma > 0:
        up = gaussian_filter(up, sigma=sigma, truncate=4.0, mode="nearest")
    return up


def _minmax(m, mask):
    vals = m[mask] if mask is not None and mask.any() else m.ravel()
    lo, hi = vals.min(), vals.max()
    if hi <= lo:
        return np.zeros_like(m, dtype=np.float64)
    return (m - lo) / (hi - lo)


def fuse_modalities(map_rgb, map_3d=None, mask=None, scales=None) -> np.ndarray:
    """Average of per-modality maps.

    By default each map is min-max normalized over the foreground `mask`.
    With `scales` each map is instead divided by its fixed (class-level) scale,
    which keeps image scores comparable across samples.
    """
    a = np.asarray(map_rgb, dtype=np.float64)
    if map_3d is None:
        return a
    b = np.asarray(map_3d, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"{a.shape} vs {b.shape}")
    mask = None if mask is None else np.asarray(mask, dtype=bool).reshape(a.shape)
    if scales is not None:
        return 0.5 * (a / scales[0] + b / scales[1])
    return 0.5 * (_minmax(a, mask) + _minmax(b, mask))


def bank_scale(bank: MemoryBank, combine=Combine.MULTIPLY) -> float:
    """Typical score magnitude of a bank: mean leave-one-out nearest-neighbour
    distance among its nodes, squared when scores are distance products."""
    X = bank.nodes().astype(np.float64)
    if len(X) < 2:
        return 1.0
    D = cdist(X, X)
    np.fill_diagonal(D, np.inf)
    s = float(D.min(1).mean())
    if s <= 0:
        return 1.0
    return s * s if Combine(combine) == Combine.MULTIPLY else s


def score_modality(grid: PatchGrid, hg: Hypergraph, bank: MemoryBank, mp_cfg: MpConfig,
                   search_cfg: SearchConfig) -> np.ndarray:
    X = np.asarray(grid.data, dtype=np.float64)
    fg = np.flatnonzero(hg.foreground)
    X_new = X.copy()
    if fg.size:
        X_new[fg] = message_pass(X[fg], hg.incidence[fg], bank.nodes(), bank.membership(),
                                 mp_cfg)
    policy = search_cfg.background_policy
    glob_mask = None if policy == BackgroundPolicy.GLOBAL_ONLY else hg.foreground
    D = global_nn_scores(X_new, bank, glob_mask)
    if search_cfg.combine == Combine.GLOBAL_ONLY:
        return D
    A = hgms_scores(X_new, hg, bank, search_cfg.k_edges, policy)
    if search_cfg.combine == Combine.HGMS_ONLY:
        return A
    return combine_scores(A, D)


def detect(grids: dict, mask: ForegroundMask, banks: dict, sahc_cfg: SahcConfig,
           mp_cfg: MpConfig, search_cfg: SearchConfig, hg: Hypergraph | None = None,
           scales: dict | None = None) -> AnomalyResult:
    """Score one test sample against per-modality banks.

    The hypergraph is built from RGB features (or the only available modality)
    and reused for every modality.
    """
    mods = [Modality(m) for m in banks]
    lead = Modality.RGB if Modality.RGB in grids else mods[0]
    rows, cols = grids[lead].rows, grids[lead].cols
    if hg is None:
        hg = build_sahc(grids[lead], mask, sahc_cfg)
    per_mod = {}
    for m in mods:
        per_mod[m] = score_modality(grids[m], hg, banks[m], mp_cfg, search_cfg)
    if scales is None:
        scales = {m: bank_scale(banks[m], search_cfg.combine) for m in mods}
    maps = [per_mod[m].reshape(rows, cols) for m in mods]
    if len(maps) == 1:
        fused = maps[0] / scales[mods[0]]
    else:
        fused = fuse_modalities(maps[0], maps[1], mask.bits,
                                scales=(scales[mods[0]], scales[mods[1]]))
    fg = mask.bits.reshape(rows, cols)
    image_score = float(fused[fg].max()) if fg.any() else 0.0
    out_size = search_cfg.out_size or (rows * 8, cols * 8)
    pixels = postprocess(fused, out_size, search_cfg.sigma)
    return AnomalyResult(fused, pixels, image_score,
                         {m: v.reshape(rows, cols) for m, v in per_mod.items()})
