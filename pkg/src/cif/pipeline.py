"""Run configuration and manifest-level orchestration used by the CLI and
the experiment scripts."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .errors import InvalidConfig
from .evaluation import EvalReport, evaluate_run
from .feature_io import (DatasetManifest, ForegroundMask, Modality,
                         extract_foreground_mask, read_depth,
                         read_feature_tensor, read_mask)
from .hypergraph import SahcConfig, build_sahc
from .memory import MemoryBank, MemoryConfig, build_memory
from .mpass import MpConfig, annd, message_pass, pcs
from .search import AnomalyResult, SearchConfig, bank_scale, detect


@dataclass
class RunConfig:
    sahc: SahcConfig = field(default_factory=SahcConfig)
    mp: MpConfig = field(default_factory=MpConfig)
    search: SearchConfig = field(default_factory=SearchConfig)
    memory: MemoryConfig = field(default_factory=MemoryConfig)
    modality: str = "both"  # rgb | 3d | both
    shots: int | None = None

    def __post_init__(self):
        if self.modality not in ("rgb", "3d", "both"):
            raise InvalidConfig(f"modality must be rgb, 3d or both, got {self.modality!r}")
        if self.shots is not None and self.shots < 1:
            raise InvalidConfig("shots must be >= 1")
        if self.search.k_edges > self.sahc.n_edges:
            raise InvalidConfig("k_edges cannot exceed the number of hyperedges")

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        sections = {"sahc": SahcConfig, "mp": MpConfig, "search": SearchConfig,
                    "memory": MemoryConfig}
        top = {f.name for f in fields(cls)}
        unknown = set(doc) - top
        if unknown:
            raise InvalidConfig(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        for key, value in doc.items():
            if key in sections:
                if not isinstance(value, dict):
                    raise InvalidConfig(f"section {key!r} must be a mapping")
                allowed = {f.name for f in fields(sections[key])}
                bad = set(value) - allowed
                if bad:
                    raise InvalidConfig(f"unknown keys in {key!r}: {sorted(bad)}")
                try:
                    kwargs[key] = sections[key](**value)
                except (TypeError, ValueError) as exc:
                    raise InvalidConfig(f"bad {key!r} section: {exc}") from exc
            else:
                kwargs[key] = value
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InvalidConfig(f"cannot load config {path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise InvalidConfig("config must be a JSON object")
        return cls.from_dict(doc)

    def to_dict(self):
        d = asdict(self)
        d["search"]["combine"] = self.search.combine.value
        d["search"]["background_policy"] = self.search.background_policy.value
        return d

    def modalities(self, available) -> list[Modality]:
        avail = [Modality(m) for m in available]
        wanted = list(Modality) if self.modality == "both" else [Modality(self.modality)]
        mods = [m for m in wanted if m in avail]
        if not mods:
            raise InvalidConfig(f"none of {self.modality!r} present in dataset")
        return mods


@dataclass
class LoadedSample:
    id: str
    label: str
    grids: dict
    mask: ForegroundMask
    gt: np.ndarray | None = None
    pixel_shape: tuple | None = None  # (h, w) of the depth map / ground truth


def load_sample(manifest: DatasetManifest, entry, modalities=None) -> LoadedSample:
    keys = entry.feature_paths.keys() if modalities is None else \
        [m.value for m in modalities] + (["rgb"] if "rgb" in entry.feature_paths else [])
    grids = {Modality(k): read_feature_tensor(manifest.resolve(entry.feature_paths[k]), k)
             for k in dict.fromkeys(keys)}
    any_grid = next(iter(grids.values()))
    pixel_shape = None
    if entry.depth_path:
        depth = read_depth(manifest.resolve(entry.depth_path))
        mask = extract_foreground_mask(depth, any_grid.rows, any_grid.cols)
        pixel_shape = depth.values.shape
    else:
        mask = ForegroundMask.full(any_grid.rows, any_grid.cols)
    gt = None
    if entry.gt_mask_path:
        gt = read_mask(manifest.resolve(entry.gt_mask_path)).as_image()
        pixel_shape = pixel_shape or gt.shape
    return LoadedSample(entry.id, entry.label, grids, mask, gt, pixel_shape)


def _lead(grids):
    return Modality.RGB if Modality.RGB in grids else next(iter(grids))


def build_banks(manifest: DatasetManifest, cfg: RunConfig, shots: int | None = None) -> dict:
    train = manifest.split("train")
    shots = shots or cfg.shots or len(train)
    if shots > len(train):
        raise InvalidConfig(f"{shots} shots requested, {len(train)} train samples available")
    avail = train[0].feature_paths.keys()
    mods = cfg.modalities(avail)
    pairs = []
    for entry in train[:shots]:
        s = load_sample(manifest, entry, mods)
        hg = build_sahc(s.grids[_lead(s.grids)], s.mask, cfg.sahc)
        pairs.append((s.grids, hg))
    return build_memory(pairs, cfg.memory, manifest.class_name, mods)


def detect_sample(sample: LoadedSample, banks: dict, cfg: RunConfig, scales=None) -> AnomalyResult:
    search = cfg.search
    if search.out_size is None and sample.pixel_shape is not None:
        # score maps live at the resolution of the sample's own pixel data
        search = replace(search, out_size=tuple(sample.pixel_shape))
    return detect(dict(sample.grids), sample.mask, banks, cfg.sahc, cfg.mp, search,
                  scales=scales)


def run_detection(manifest: DatasetManifest, banks: dict, cfg: RunConfig):
    """Detect every test sample; returns [(LoadedSample, AnomalyResult)]."""
    scales = {m: bank_scale(b, cfg.search.combine) for m, b in banks.items()}
    out = []
    for entry in manifest.split("test"):
        s = load_sample(manifest, entry, list(banks))
        out.append((s, detect_sample(s, banks, cfg, scales)))
    return out


def gt_for(sample: LoadedSample, shape):
    if sample.gt is not None:
        if sample.gt.shape != tuple(shape):
            raise InvalidConfig(f"{sample.id}: ground truth {sample.gt.shape} vs map {shape}")
        return sample.gt
    return np.zeros(shape, dtype=bool)


def evaluate_results(results, class_name="", fpr_limit=0.3) -> EvalReport:
    labels = [int(s.label == "anomalous") for s, _ in results]
    maps = [r.pixel_scores for _, r in results]
    gts = [gt_for(s, r.pixel_scores.shape) for s, r in results]
    return evaluate_run([r.image_score for _, r in results], labels, maps, gts,
                        class_name, fpr_limit)


def run_class(manifest: DatasetManifest, cfg: RunConfig, shots=None):
    banks = build_banks(manifest, cfg, shots)
    results = run_detection(manifest, banks, cfg)
    return banks, results, evaluate_results(results, manifest.class_name)


def load_banks(paths) -> dict:
    banks = [MemoryBank.load(p) for p in paths]
    return {b.modality: b for b in banks}


def mp_sweep(manifest: DatasetManifest, banks: dict, cfg: RunConfig, alphas, layers,
             modality=None):
    """ANND / PCS of test foreground nodes before and after message passing.

    Returns rows of dicts averaged over test samples; the first row (alpha and
    layers None) is the no-message-passing baseline.
    """
    mod = Modality(modality) if modality else next(iter(banks))
    bank = banks[mod]
    mem = bank.nodes().astype(np.float64)
    H_mem = bank.membership()
    prepared = []
    for entry in manifest.split("test"):
        s = load_sample(manifest, entry, [mod])
        hg = build_sahc(s.grids[_lead(s.grids)], s.mask, cfg.sahc)
        fg = np.flatnonzero(hg.foreground)
        prepared.append((np.asarray(s.grids[mod].data, np.float64)[fg], hg.incidence[fg]))

    rows = [{"alpha": None, "layers": None,
             "annd": float(np.mean([annd(X, mem) for X, _ in prepared])), "pcs": 1.0}]
    for L in layers:
        for a in alphas:
            mp = MpConfig(alpha=a, layers=L, k_cross=cfg.mp.k_cross)
            vals_annd, vals_pcs = [], []
            for X, H in prepared:
                X_new = message_pass(X, H, mem, H_mem, mp)
                vals_annd.append(annd(X_new, mem))
                vals_pcs.append(pcs(X, X_new))
            rows.append({"alpha": a, "layers": L, "annd": float(np.mean(vals_annd)),
                         "pcs": float(np.mean(vals_pcs))})
    return rows
