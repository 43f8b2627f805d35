"""On-disk formats (CIFT tensors, CIFM masks, CIFD depth maps, JSON manifests)
and depth-based foreground extraction.

All binary formats are little-endian with a 4-byte magic and a u32 version.
"""
from __future__ import annotations

import enum
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (AllDepthMissing, BadMagic, InvalidConfig, IoFailure,
                     NonFiniteValue, ShapeMismatch, TruncatedFile,
                     VersionUnsupported)

FORMAT_VERSION = 1
TENSOR_MAGIC = b"CIFT"
MASK_MAGIC = b"CIFM"
DEPTH_MAGIC = b"CIFD"


class Modality(str, enum.Enum):
    RGB = "rgb"
    PC3D = "3d"


@dataclass
class PatchGrid:
    rows: int
    cols: int
    data: np.ndarray  # (rows*cols, dim), row-major over the grid
    modality: Modality = Modality.RGB

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 2:
            raise ShapeMismatch(f"feature data must be 2-D, got shape {self.data.shape}")
        if self.rows <= 0 or self.cols <= 0 or self.dim <= 0:
            raise ShapeMismatch("rows, cols and dim must be positive")
        if self.data.shape[0] != self.rows * self.cols:
            raise ShapeMismatch(
                f"{self.data.shape[0]} rows of data for a {self.rows}x{self.cols} grid")
        if not np.all(np.isfinite(self.data)):
            raise NonFiniteValue("feature data contains NaN or Inf")

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    @property
    def n(self) -> int:
        return self.rows * self.cols


@dataclass
class ForegroundMask:
    rows: int
    cols: int
    bits: np.ndarray  # (rows*cols,) bool

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=bool).reshape(-1)
        if self.bits.size != self.rows * self.cols:
            raise ShapeMismatch("mask size does not match its grid shape")

    @classmethod
    def full(cls, rows, cols):
        return cls(rows, cols, np.ones(rows * cols, dtype=bool))

    def as_image(self) -> np.ndarray:
        return self.bits.reshape(self.rows, self.cols)


@dataclass
class DepthMap:
    values: np.ndarray  # (h, w); 0 marks missing depth

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 2 or self.values.size == 0:
            raise ShapeMismatch("depth map must be a non-empty 2-D array")
        if not np.all(np.isfinite(self.values)):
            raise NonFiniteValue("depth map contains NaN or Inf")

    @property
    def h(self):
        return self.values.shape[0]

    @property
    def w(self):
        return self.values.shape[1]


# ---------------------------------------------------------------- binary io

def atomic_write_bytes(path, payload: bytes):
    """Write via a temp file in the target directory, then rename."""
    path = Path(path)
    try:
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except OSError as exc:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc


def _parse_header(buf: bytes, magic: bytes, n_fields: int, path):
    size = 4 + 4 * (1 + n_fields)
    if len(buf) < 4 or buf[:4] != magic:
        raise BadMagic(f"{path}: expected magic {magic!r}, got {buf[:4]!r}")
    if len(buf) < size:
        raise TruncatedFile(f"{path}: header truncated")
    version, *fields = struct.unpack_from(f"<{1 + n_fields}I", buf, 4)
    if version != FORMAT_VERSION:
        raise VersionUnsupported(f"{path}: version {version}")
    return fields, size


def _payload(buf, offset, count, dtype, path):
    nbytes = count * np.dtype(dtype).itemsize
    if len(buf) < offset + nbytes:
        raise TruncatedFile(f"{path}: expected {nbytes} payload bytes, got {len(buf) - offset}")
    return np.frombuffer(buf, dtype=dtype, count=count, offset=offset).copy()


def tensor_to_bytes(grid: PatchGrid) -> bytes:
    header = TENSOR_MAGIC + struct.pack("<4I", FORMAT_VERSION, grid.rows, grid.cols, grid.dim)
    return header + np.ascontiguousarray(grid.data, dtype="<f4").tobytes()


def write_feature_tensor(grid: PatchGrid, path):
    atomic_write_bytes(path, tensor_to_bytes(grid))


def read_feature_tensor(path, modality=Modality.RGB) -> PatchGrid:
    buf = _read_bytes(path)
    (rows, cols, dim), off = _parse_header(buf, TENSOR_MAGIC, 3, path)
    data = _payload(buf, off, rows * cols * dim, "<f4", path)
    if not np.all(np.isfinite(data)):
        raise NonFiniteValue(f"{path}: non-finite values")
    return PatchGrid(rows, cols, data.reshape(rows * cols, dim).astype(np.float32),
                     Modality(modality))


def write_mask(mask: ForegroundMask, path):
    header = MASK_MAGIC + struct.pack("<3I", FORMAT_VERSION, mask.rows, mask.cols)
    atomic_write_bytes(path, header + mask.bits.astype(np.uint8).tobytes())


def read_mask(path) -> ForegroundMask:
    buf = _read_bytes(path)
    (rows, cols), off = _parse_header(buf, MASK_MAGIC, 2, path)
    bits = _payload(buf, off, rows * cols, np.uint8, path)
    return ForegroundMask(rows, cols, bits != 0)


def write_depth(depth: DepthMap, path):
    header = DEPTH_MAGIC + struct.pack("<3I", FORMAT_VERSION, depth.h, depth.w)
    atomic_write_bytes(path, header + np.ascontiguousarray(depth.values, dtype="<f4").tobytes())


def read_depth(path) -> DepthMap:
    buf = _read_bytes(path)
    (h, w), off = _parse_header(buf, DEPTH_MAGIC, 2, path)
    values = _payload(buf, off, h * w, "<f4", path)
    if not np.all(np.isfinite(values)):
        raise NonFiniteValue(f"{path}: non-finite values")
    return DepthMap(values.reshape(h, w).astype(np.float32))


# ---------------------------------------------------------------- manifest

@dataclass
class SampleEntry:
    id: str
    split: str  # "train" | "test"
    label: str  # "normal" | "anomalous"
    feature_paths: dict[str, str]
    depth_path: str | None = None
    gt_mask_path: str | None = None


@dataclass
class DatasetManifest:
    """Dataset description. Paths are stored relative to the manifest file.

    JSON schema::

        {"format": "cif-manifest", "version": 1, "class_name": str,
         "samples": [{"id": str, "split": "train"|"test",
                      "label": "normal"|"anomalous",
                      "feature_paths": {"rgb": path, "3d": path},
                      "depth_path": path|null, "gt_mask_path": path|null}]}
    """
    class_name: str
    samples: list[SampleEntry] = field(default_factory=list)
    root: Path = Path(".")

    def resolve(self, rel) -> Path:
        return self.root / rel

    def split(self, name):
        return [s for s in self.samples if s.split == name]

    def validate(self, check_paths=True):
        for s in self.samples:
            if s.split not in ("train", "test"):
                raise InvalidConfig(f"sample {s.id}: bad split {s.split!r}")
            if s.label not in ("normal", "anomalous"):
                raise InvalidConfig(f"sample {s.id}: bad label {s.label!r}")
            if s.split == "train" and s.label != "normal":
                raise InvalidConfig(f"train sample {s.id} is not labelled normal")
            for key in s.feature_paths:
                Modality(key)
            if check_paths:
                paths = list(s.feature_paths.values()) + [
                    p for p in (s.depth_path, s.gt_mask_path) if p]
                for p in paths:
                    if not self.resolve(p).is_file():
                        raise InvalidConfig(f"sample {s.id}: missing file {p}")

    def to_json(self) -> str:
        doc = {
            "format": "cif-manifest",
            "version": FORMAT_VERSION,
            "class_name": self.class_name,
            "samples": [vars(s) for s in self.samples],
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def save_manifest(manifest: DatasetManifest, path):
    atomic_write_bytes(path, manifest.to_json().encode())


def load_manifest(path, check_paths=True) -> DatasetManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise IoFailure(f"cannot read manifest {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidConfig(f"manifest {path} is not valid JSON: {exc}") from exc
    if doc.get("format") != "cif-manifest":
        raise InvalidConfig(f"{path} is not a cif manifest")
    try:
        samples = [SampleEntry(**s) for s in doc["samples"]]
        manifest = DatasetManifest(doc["class_name"], samples, path.parent)
    except (KeyError, TypeError) as exc:
        raise InvalidConfig(f"malformed manifest {path}: {exc}") from exc
    manifest.validate(check_paths)
    return manifest


# ---------------------------------------------------------------- foreground

_NEIGHBOURS = [(dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1) if (dr, dc) != (0, 0)]


def _shifted(a, dr, dc):
    out = np.zeros_like(a)
    h, w = a.shape
    out[max(dr, 0):h + min(dr, 0), max(dc, 0):w + min(dc, 0)] = \
        a[max(-dr, 0):h + min(-dr, 0), max(-dc, 0):w + min(-dc, 0)]
    return out


def fill_missing_depth(values: np.ndarray, valid: np.ndarray, iters: int):
    """Neighbourhood-mean hole filling.

    Each pass replaces every invalid pixel that has at least one valid
    8-neighbour by the mean of those neighbours. Returns (values, valid).
    """
    d = np.where(valid, values, 0.0).astype(np.float64)
    valid = valid.copy()
    for _ in range(iters):
        if valid.all():
            break
        total = np.zeros_like(d)
        count = np.zeros_like(d)
        v = valid.astype(np.float64)
        for dr, dc in _NEIGHBOURS:
            total += _shifted(d, dr, dc)
            count += _shifted(v, dr, dc)
        fill = ~valid & (count > 0)
        d[fill] = total[fill] / count[fill]
        valid = valid | fill
    return d, valid


def pool_to_grid(pixel_mask: np.ndarray, rows: int, cols: int) -> np.ndarray:
    """Patch (r, c) is set iff more than half of its pixels are set."""
    h, w = pixel_mask.shape
    r_edges = (np.arange(rows + 1) * h) // rows
    c_edges = (np.arange(cols + 1) * w) // cols
    # integral image gives every block sum in O(1)
    ii = np.zeros((h + 1, w + 1), dtype=np.int64)
    ii[1:, 1:] = pixel_mask.astype(np.int64).cumsum(0).cumsum(1)
    r0, r1 = r_edges[:-1, None], r_edges[1:, None]
    c0, c1 = c_edges[None, :-1], c_edges[None, 1:]
    sums = ii[r1, c1] - ii[r0, c1] - ii[r1, c0] + ii[r0, c0]
    sizes = (r1 - r0) * (c1 - c0)
    return 2 * sums > sizes


def extract_foreground_mask(depth: DepthMap, patch_rows: int, patch_cols: int,
                            fill_iters: int = 3, threshold: float = 7e-3) -> ForegroundMask:
    d = np.asarray(depth.values, dtype=np.float64)
    valid = d != 0
    if not valid.any():
        raise AllDepthMissing("depth map has no valid values")
    lo, hi = d[valid].min(), d[valid].max()
    norm = (d - lo) / (hi - lo) if hi > lo else np.zeros_like(d)
    filled, valid = fill_missing_depth(norm, valid, fill_iters)
    corners = (np.array([0, 0, -1, -1]), np.array([0, -1, 0, -1]))
    corner_ok = valid[corners]
    background = filled[corners][corner_ok].mean() if corner_ok.any() else 0.0
    # pixels still missing after filling count as background
    pixel_fg = valid & (np.abs(filled - background) > threshold)
    return ForegroundMask(patch_rows, patch_cols,
                          pool_to_grid(pixel_fg, patch_rows, patch_cols).reshape(-1))
