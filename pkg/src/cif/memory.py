"""Structure-guided memory bank: node assignment, hyperedge update and
per-hyperedge coreset sampling."""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .errors import (BadMagic, DimMismatch, EmptyBucket, EmptyInput,
                     InvalidConfig, ShapeMismatch, TruncatedFile)
from .feature_io import (FORMAT_VERSION, Modality, PatchGrid, _parse_header,
                         _read_bytes, atomic_write_bytes)
from .hypergraph import Hypergraph

BANK_MAGIC = b"CIFB"


@dataclass
class MemoryBank:
    class_name: str
    modality: Modality
    buckets: list[np.ndarray]  # bucket e: (m_e, dim) float32
    sampling_rate: float = 0.1
    edge_feats: np.ndarray = field(default=None)

    def __post_init__(self):
        self.buckets = [np.asarray(b, dtype=np.float32).reshape(len(b), -1) for b in self.buckets]
        if self.edge_feats is None:
            update_hyperedges(self)

    @property
    def n_edges(self):
        return len(self.buckets)

    @property
    def dim(self):
        return self.buckets[0].shape[1]

    @property
    def sizes(self):
        return [len(b) for b in self.buckets]

    def nodes(self) -> np.ndarray:
        """All retained nodes, bucket by bucket."""
        return np.concatenate(self.buckets, axis=0)

    def membership(self) -> np.ndarray:
        """Bucket membership of nodes() as an (A, E) incidence matrix."""
        H = np.zeros((sum(self.sizes), self.n_edges), dtype=np.uint8)
        H[np.arange(H.shape[0]), np.repeat(np.arange(self.n_edges), self.sizes)] = 1
        return H

    def to_bytes(self) -> bytes:
        name = self.class_name.encode()
        out = [BANK_MAGIC,
               struct.pack("<3Id", FORMAT_VERSION, self.n_edges, self.dim, self.sampling_rate),
               struct.pack("<BH", 0 if self.modality == Modality.RGB else 1, len(name)), name]
        for b in self.buckets:
            out.append(struct.pack("<I", len(b)))
            out.append(np.ascontiguousarray(b, dtype="<f4").tobytes())
        out.append(np.ascontiguousarray(self.edge_feats, dtype="<f4").tobytes())
        return b"".join(out)

    @classmethod
    def from_bytes(cls, buf: bytes, path="<bytes>") -> "MemoryBank":
        (n_edges, dim), off = _parse_header(buf, BANK_MAGIC, 2, path)
        try:
            (rate,) = struct.unpack_from("<d", buf, off)
            off += 8
            code, nlen = struct.unpack_from("<BH", buf, off)
            off += 3
            name = buf[off:off + nlen].decode()
            off += nlen
            buckets = []
            for _ in range(n_edges):
                (count,) = struct.unpack_from("<I", buf, off)
                off += 4
                nbytes = count * dim * 4
                if len(buf) < off + nbytes:
                    raise TruncatedFile(f"{path}: bucket payload truncated")
                buckets.append(np.frombuffer(buf, "<f4", count * dim, off).reshape(count, dim))
                off += nbytes
            if len(buf) < off + n_edges * dim * 4:
                raise TruncatedFile(f"{path}: edge feature block truncated")
            edge = np.frombuffer(buf, "<f4", n_edges * dim, off).reshape(n_edges, dim)
        except struct.error as exc:
            raise TruncatedFile(f"{path}: {exc}") from exc
        modality = Modality.RGB if code == 0 else Modality.PC3D
        return cls(name, modality, [b.astype(np.float32) for b in buckets], rate,
                   edge.astype(np.float32))

    def save(self, path):
        atomic_write_bytes(path, self.to_bytes())

    @classmethod
    def load(cls, path) -> "MemoryBank":
        buf = _read_bytes(path)
        if buf[:4] != BANK_MAGIC:
            raise BadMagic(f"{path}: not a memory bank file")
        return cls.from_bytes(buf, path)


@dataclass
class MemoryConfig:
    rate: float = 0.1

    def __post_init__(self):
        if not 0.0 < self.rate <= 1.0:
            raise InvalidConfig("sampling rate must lie in (0, 1]")


def update_hyperedges(bank: MemoryBank):
    """Recompute every edge feature as the mean of its bucket."""
    if any(len(b) == 0 for b in bank.buckets):
        raise EmptyBucket("cannot update hyperedges with an empty bucket")
    bank.edge_feats = np.stack(
        [b.astype(np.float64).mean(0) for b in bank.buckets]).astype(np.float32)
    return bank


def _hard_buckets(X, hg: Hypergraph):
    return [X[hg.hard_assign == e] for e in range(hg.n_edges)]


def init_memory(sample_feats: PatchGrid, hg: Hypergraph, modality=None, rate=0.1,
                class_name="") -> MemoryBank:
    if sample_feats.n != hg.n_nodes:
        raise ShapeMismatch("hypergraph and feature grid disagree on node count")
    buckets = _hard_buckets(sample_feats.data, hg)
    empty = [e for e, b in enumerate(buckets) if len(b) == 0]
    if empty:
        raise EmptyBucket(f"hyperedges {empty} have no hard-assigned node")
    return MemoryBank(class_name, Modality(modality or sample_feats.modality), buckets, rate)


def match_edges(bank: MemoryBank, sample_feats: PatchGrid, sample_hg: Hypergraph) -> np.ndarray:
    """For each sample hyperedge, the index of the nearest bank hyperedge
    (Euclidean distance between hard-membership mean features).

    Sample edges without hard members map to -1."""
    if sample_feats.dim != bank.dim:
        raise DimMismatch(f"sample dim {sample_feats.dim} != bank dim {bank.dim}")
    X = np.asarray(sample_feats.data, dtype=np.float64)
    match = np.full(sample_hg.n_edges, -1, dtype=np.int64)
    for s in range(sample_hg.n_edges):
        members = X[sample_hg.hard_assign == s]
        if len(members) == 0:
            continue
        d = np.linalg.norm(bank.edge_feats.astype(np.float64) - members.mean(0), axis=1)
        match[s] = int(np.argmin(d))
    return match


def merge_nodes(bank: MemoryBank, sample_feats: PatchGrid, sample_hg: Hypergraph, match):
    if sample_feats.dim != bank.dim:
        raise DimMismatch(f"sample dim {sample_feats.dim} != bank dim {bank.dim}")
    X = np.asarray(sample_feats.data, dtype=np.float32)
    for s, target in enumerate(match):
        if target < 0:
            continue
        members = X[sample_hg.hard_assign == s]
        bank.buckets[target] = np.concatenate([bank.buckets[target], members], axis=0)
    return bank


def assign_nodes(bank: MemoryBank, sample_feats: PatchGrid, sample_hg: Hypergraph) -> np.ndarray:
    """Merge each sample hyperedge's hard members into the most similar bank
    bucket. Mutates `bank` and returns the edge matching used."""
    match = match_edges(bank, sample_feats, sample_hg)
    merge_nodes(bank, sample_feats, sample_hg, match)
    return match


def target_size(m: int, rate: float) -> int:
    # rounding guards products like (1/3) * 3m against ceil overshoot
    return max(1, math.ceil(round(rate * m, 9)))


def greedy_coreset_order(nodes, n_select: int) -> np.ndarray:
    """First `n_select` picks of farthest-first traversal, in pick order.

    Starts from the node farthest from the mean; every later pick maximizes the
    distance to the already selected set. Ties go to the lowest index.
    """
    X = np.asarray(nodes, dtype=np.float64)
    m = X.shape[0]
    if m == 0:
        raise EmptyInput("no nodes to sample")
    n_select = min(n_select, m)
    start = int(np.argmax(np.linalg.norm(X - X.mean(0), axis=1)))
    order = [start]
    mind = cdist(X, X[start:start + 1])[:, 0]
    mind[start] = -1.0
    for _ in range(n_select - 1):
        nxt = int(np.argmax(mind))
        order.append(nxt)
        mind = np.minimum(mind, cdist(X, X[nxt:nxt + 1])[:, 0])
        mind[order] = -1.0
    return np.asarray(order, dtype=np.int64)


def coreset_sample_bucket(nodes, rate: float, seed: int = 0) -> np.ndarray:
    """Greedy k-center subset of size max(1, ceil(rate*m)); sorted indices.

    `seed` is accepted for interface stability; the traversal is deterministic.
    """
    nodes = np.asarray(nodes)
    if nodes.shape[0] == 0:
        raise EmptyInput("no nodes to sample")
    if not 0.0 < rate <= 1.0:
        raise InvalidConfig("sampling rate must lie in (0, 1]")
    return np.sort(greedy_coreset_order(nodes, target_size(len(nodes), rate)))


def minimax_medoid(nodes) -> int:
    """Index minimizing the maximum distance to all other nodes."""
    X = np.asarray(nodes, dtype=np.float64)
    if X.shape[0] == 0:
        raise EmptyInput("no nodes")
    return int(np.argmin(cdist(X, X).max(1)))


def sample_bucket(nodes, rate: float) -> np.ndarray:
    """Indices kept for one bucket.

    When the plain budget floor(rate*m) would leave the bucket empty the single
    minimax medoid is kept instead of a coreset pick.
    """
    if math.floor(round(rate * len(nodes), 9)) < 1:
        return np.array([minimax_medoid(nodes)], dtype=np.int64)
    return coreset_sample_bucket(nodes, rate)


def build_memory(samples, cfg: MemoryConfig | None = None, class_name: str = "",
                 modalities=None) -> dict:
    """Build one bank per modality.

    `samples` is a list of (grids, hypergraph) pairs where `grids` maps
    Modality -> PatchGrid and the hypergraph was built from RGB features. The
    RGB bank drives edge matching; other modalities follow the same node
    routing so all banks share one bucket structure.
    """
    cfg = cfg or MemoryConfig()
    if not samples:
        raise EmptyInput("at least one training sample is required")
    first_grids, first_hg = samples[0]
    modalities = [Modality(m) for m in (modalities or first_grids.keys())]
    lead = Modality.RGB if Modality.RGB in first_grids else modalities[0]

    banks = {}
    for mod in {lead, *modalities}:
        banks[mod] = init_memory(first_grids[mod], first_hg, mod, cfg.rate, class_name)
    for grids, hg in samples[1:]:
        match = assign_nodes(banks[lead], grids[lead], hg)
        for mod, bank in banks.items():
            if mod != lead:
                merge_nodes(bank, grids[mod], hg, match)
        for bank in banks.values():
            update_hyperedges(bank)

    for bank in banks.values():
        bank.buckets = [b[sample_bucket(b, cfg.rate)] for b in bank.buckets]
        update_hyperedges(bank)
    return {m: banks[m] for m in modalities}
