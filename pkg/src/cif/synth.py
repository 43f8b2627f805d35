"""Synthetic single-semantic dataset generator.

An object occupies a centered rectangle of the patch grid and is split into
`k_true` parts; each part has its own unit-norm prototype per modality and
the background has another. Anomalous test samples shift one contiguous
block of object patches by `delta` along a random unit direction.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidConfig
from .feature_io import (DatasetManifest, DepthMap, ForegroundMask, Modality,
                         PatchGrid, SampleEntry, save_manifest, write_depth,
                         write_feature_tensor, write_mask)


@dataclass
class SynthConfig:
    class_name: str = "synthetic"
    rows: int = 28
    cols: int = 28
    dim: int = 64
    k_true: int = 4
    sigma: float = 0.05
    delta: float = 1.0
    n_train: int = 4
    n_test_normal: int = 20
    n_test_anomalous: int = 20
    margin: int = 4          # background border width, in patches
    block: int = 3           # anomaly block side, in patches
    px_per_patch: int = 8
    hole_frac: float = 0.01  # fraction of depth pixels dropped to 0
    modalities: tuple[str, ...] = ("rgb", "3d")

    def __post_init__(self):
        self.modalities = tuple(self.modalities)
        problems = []
        if self.k_true < 1:
            problems.append("k_true must be >= 1")
        if self.dim < 2:
            problems.append("dim must be >= 2")
        if self.sigma < 0:
            problems.append("sigma must be >= 0")
        if self.delta < 0:
            problems.append("delta must be >= 0")
        if min(self.n_train, self.n_test_normal, self.n_test_anomalous) < 0 or self.n_train < 1:
            problems.append("sample counts must be non-negative with n_train >= 1")
        obj_r, obj_c = self.rows - 2 * self.margin, self.cols - 2 * self.margin
        if self.margin < 1 or obj_r < 1 or obj_c < 1:
            problems.append("margin leaves no object (and must leave background corners)")
        elif obj_r * obj_c < self.k_true:
            problems.append("object smaller than k_true parts")
        if self.block < 1 or self.block > min(obj_r, obj_c):
            problems.append("anomaly block must fit inside the object")
        if self.px_per_patch < 1:
            problems.append("px_per_patch must be >= 1")
        if not 0 <= self.hole_frac < 1:
            problems.append("hole_frac must lie in [0, 1)")
        if not self.modalities or any(m not in ("rgb", "3d") for m in self.modalities):
            problems.append("modalities must be drawn from {'rgb', '3d'}")
        if problems:
            raise InvalidConfig("; ".join(problems))

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidConfig(f"unknown synth config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        d = asdict(self)
        d["modalities"] = list(self.modalities)
        return d


def _unit(rng, n, dim):
    v = rng.standard_normal((n, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def part_layout(cfg: SynthConfig) -> np.ndarray:
    """(rows, cols) int map: -1 background, else the object part index."""
    layout = np.full((cfg.rows, cfg.cols), -1, dtype=np.int64)
    obj_r, obj_c = cfg.rows - 2 * cfg.margin, cfg.cols - 2 * cfg.margin
    nr = max(1, int(math.isqrt(cfg.k_true)))
    nc = math.ceil(cfg.k_true / nr)
    rr = np.minimum(np.arange(obj_r) * nr // obj_r, nr - 1)
    cc = np.minimum(np.arange(obj_c) * nc // obj_c, nc - 1)
    parts = np.minimum(rr[:, None] * nc + cc[None, :], cfg.k_true - 1)
    layout[cfg.margin:cfg.margin + obj_r, cfg.margin:cfg.margin + obj_c] = parts
    return layout


class _Generator:
    def __init__(self, cfg: SynthConfig, seed: int):
        self.cfg = cfg
        self.rng = np.random.default_rng(seed)
        self.layout = part_layout(cfg).ravel()
        self.protos = {}
        for m in cfg.modalities:
            # row k_true is the background prototype
            self.protos[m] = _unit(self.rng, cfg.k_true + 1, cfg.dim)

    def features(self, m, block=None, direction=None):
        cfg = self.cfg
        idx = np.where(self.layout >= 0, self.layout, cfg.k_true)
        X = self.protos[m][idx].copy()
        if block is not None:
            X[block] += cfg.delta * direction
        X += cfg.sigma * self.rng.standard_normal(X.shape)
        return X.astype(np.float32)

    def depth(self):
        cfg = self.cfg
        p = cfg.px_per_patch
        obj = (self.layout.reshape(cfg.rows, cfg.cols) >= 0)
        d = np.where(np.kron(obj, np.ones((p, p))) > 0, 0.6, 0.5)
        holes = self.rng.random(d.shape) < cfg.hole_frac
        holes[[0, 0, -1, -1], [0, -1, 0, -1]] = False
        d[holes] = 0.0
        return d.astype(np.float32)

    def anomaly_block(self):
        cfg = self.cfg
        obj_r, obj_c = cfg.rows - 2 * cfg.margin, cfg.cols - 2 * cfg.margin
        r0 = cfg.margin + int(self.rng.integers(obj_r - cfg.block + 1))
        c0 = cfg.margin + int(self.rng.integers(obj_c - cfg.block + 1))
        grid = np.zeros((cfg.rows, cfg.cols), dtype=bool)
        grid[r0:r0 + cfg.block, c0:c0 + cfg.block] = True
        return grid


def generate_synthetic_class(cfg: SynthConfig, seed: int, out_dir) -> DatasetManifest:
    """Write tensors, depth maps, ground-truth masks and `manifest.json` under
    `out_dir`. Output is a pure function of (cfg, seed)."""
    out = Path(out_dir)
    for sub in ("features", "depth", "gt"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    g = _Generator(cfg, seed)
    p = cfg.px_per_patch
    samples = []
    plan = ([("train", "normal")] * cfg.n_train + [("test", "normal")] * cfg.n_test_normal
            + [("test", "anomalous")] * cfg.n_test_anomalous)
    for i, (split, lab) in enumerate(plan):
        sid = f"{split}_{i:03d}_{lab}"
        block = direction = None
        if lab == "anomalous":
            block = g.anomaly_block()
        paths = {}
        for m in cfg.modalities:
            if block is not None:
                direction = _unit(g.rng, 1, cfg.dim)[0]
            X = g.features(m, None if block is None else block.ravel(), direction)
            rel = f"features/{sid}_{m}.cift"
            write_feature_tensor(PatchGrid(cfg.rows, cfg.cols, X, Modality(m)), out / rel)
            paths[m] = rel
        depth_rel = f"depth/{sid}.cifd"
        write_depth(DepthMap(g.depth()), out / depth_rel)
        gt_rel = None
        if block is not None:
            gt_rel = f"gt/{sid}.cifm"
            pix = np.kron(block, np.ones((p, p), dtype=bool))
            write_mask(ForegroundMask(*pix.shape, pix.ravel()), out / gt_rel)
        samples.append(SampleEntry(sid, split, lab, paths, depth_rel, gt_rel))
    manifest = DatasetManifest(cfg.class_name, samples, out)
    save_manifest(manifest, out / "manifest.json")
    return manifest
