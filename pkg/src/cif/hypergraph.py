"""Semantic-aware hypergraph construction and hypergraph quality metrics."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .errors import (DegenerateHypergraph, EmptyHyperedge, InvalidConfig,
                     ShapeMismatch, TooFewForeground, TooFewPoints)
from .feature_io import ForegroundMask, PatchGrid, atomic_write_bytes

BACKGROUND = -1


@dataclass
class SahcConfig:
    n_edges: int = 4
    tau: float = 0.5
    kmeans_iters: int = 100
    kmeans_restarts: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.n_edges < 1:
            raise InvalidConfig("n_edges must be >= 1")
        if not 0.0 <= self.tau <= 1.0:
            raise InvalidConfig("tau must lie in [0, 1]")
        if self.kmeans_iters < 1:
            raise InvalidConfig("kmeans_iters must be >= 1")


@dataclass
class Hypergraph:
    incidence: np.ndarray    # (N, E) uint8
    hard_assign: np.ndarray  # (N,) int, BACKGROUND for background nodes
    centers: np.ndarray      # (E, dim)

    @property
    def n_nodes(self):
        return self.incidence.shape[0]

    @property
    def n_edges(self):
        return self.incidence.shape[1]

    @property
    def foreground(self) -> np.ndarray:
        return self.hard_assign != BACKGROUND

    def hard_incidence(self) -> np.ndarray:
        H = np.zeros_like(self.incidence)
        fg = np.flatnonzero(self.foreground)
        H[fg, self.hard_assign[fg]] = 1
        return H

    def to_json(self) -> str:
        doc = {
            "format": "cif-hypergraph",
            "n_nodes": self.n_nodes,
            "n_edges": self.n_edges,
            "edges": [np.flatnonzero(self.incidence[:, e]).tolist() for e in range(self.n_edges)],
            "hard_assign": self.hard_assign.tolist(),
            "centers": self.centers.tolist(),
        }
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "Hypergraph":
        doc = json.loads(text)
        H = np.zeros((doc["n_nodes"], doc["n_edges"]), dtype=np.uint8)
        for e, members in enumerate(doc["edges"]):
            H[members, e] = 1
        return cls(H, np.asarray(doc["hard_assign"], dtype=np.int64),
                   np.asarray(doc["centers"], dtype=np.float64))

    def save(self, path):
        atomic_write_bytes(path, self.to_json().encode())


def _kmeanspp(X, k, rng):
    m = X.shape[0]
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.integers(m)]
    d2 = ((X - centers[0]) ** 2).sum(1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(m)
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            idx = min(idx, m - 1)
        centers[j] = X[idx]
        d2 = np.minimum(d2, ((X - centers[j]) ** 2).sum(1))
    return centers


def _lloyd(X, k, iters, rng, tol):
    centers = _kmeanspp(X, k, rng)
    for _ in range(iters):
        d2 = cdist(X, centers, "sqeuclidean")
        assign = d2.argmin(1)
        _repair_empty(X, d2, assign, k)
        new = np.stack([X[assign == j].mean(0) for j in range(k)])
        shift = np.sqrt(((new - centers) ** 2).sum(1)).max()
        centers = new
        if shift < tol:
            break
    d2 = cdist(X, centers, "sqeuclidean")
    assign = d2.argmin(1)
    _repair_empty(X, d2, assign, k)
    inertia = float(d2[np.arange(len(X)), assign].sum())
    return centers, assign, inertia


def kmeans(X, k: int, iters: int = 100, seed: int = 0, n_init: int = 10, tol: float = 1e-6):
    """Lloyd's k-means with k-means++ seeding.

    Runs `n_init` seeded restarts and keeps the lowest inertia (first wins on
    ties). Empty clusters are repaired by moving in the point farthest from
    its current center. Deterministic in (X, k, iters, seed, n_init).
    Returns (centers (k, dim), assign (M,)).
    """
    X = np.asarray(X, dtype=np.float64)
    m = X.shape[0]
    if k < 1 or m < k:
        raise TooFewPoints(f"need at least k={k} points, got {m}")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, n_init)):
        run = _lloyd(X, k, iters, rng, tol)
        if best is None or run[2] < best[2]:
            best = run
    return best[0], best[1]


def _repair_empty(X, d2, assign, k):
    counts = np.bincount(assign, minlength=k)
    for j in np.flatnonzero(counts == 0):
        own = d2[np.arange(len(X)), assign]
        donors = counts[assign] > 1
        # farthest point among those whose cluster can spare it
        idx = int(np.argmax(np.where(donors, own, -np.inf)))
        counts[assign[idx]] -= 1
        assign[idx] = j
        counts[j] = 1
        d2[idx] = np.inf
        d2[idx, j] = 0.0


def cosine_sim_to_centers(X, C) -> np.ndarray:
    """Cosine similarity matrix (M, k); zero-norm rows or centers give 0."""
    X = np.asarray(X, dtype=np.float64)
    C = np.asarray(C, dtype=np.float64)
    xn = np.linalg.norm(X, axis=1)
    cn = np.linalg.norm(C, axis=1)
    denom = np.outer(xn, cn)
    dots = X @ C.T
    out = np.zeros_like(dots)
    ok = denom > 0
    out[ok] = dots[ok] / denom[ok]
    return np.clip(out, -1.0, 1.0)


def assign_incidence(X_fore, centers, tau):
    """Soft incidence and hard assignment for foreground features given centers.

    Similarities are min-max normalized globally; a node joins every edge whose
    normalized similarity reaches tau, and always joins its argmax edge.
    """
    sim = cosine_sim_to_centers(X_fore, centers)
    lo, hi = sim.min(), sim.max()
    norm = (sim - lo) / (hi - lo) if hi > lo else np.ones_like(sim)
    hard = sim.argmax(1)  # first maximum = lowest index
    H = (norm >= tau).astype(np.uint8)
    H[np.arange(len(hard)), hard] = 1
    return H, hard


def build_sahc(features: PatchGrid, mask: ForegroundMask, cfg: SahcConfig) -> Hypergraph:
    if mask.bits.size != features.n:
        raise ShapeMismatch("mask does not match feature grid")
    fg = np.flatnonzero(mask.bits)
    if fg.size < cfg.n_edges:
        raise TooFewForeground(f"{fg.size} foreground nodes for {cfg.n_edges} hyperedges")
    X = np.asarray(features.data, dtype=np.float64)
    centers, _ = kmeans(X[fg], cfg.n_edges, cfg.kmeans_iters, cfg.seed, cfg.kmeans_restarts)
    H_fg, hard_fg = assign_incidence(X[fg], centers, cfg.tau)
    H = np.zeros((features.n, cfg.n_edges), dtype=np.uint8)
    H[fg] = H_fg
    hard = np.full(features.n, BACKGROUND, dtype=np.int64)
    hard[fg] = hard_fg
    return Hypergraph(H, hard, centers)


def hyperedge_features(X, H) -> np.ndarray:
    """Row e is the mean feature of the members of hyperedge e."""
    X = np.asarray(X, dtype=np.float64)
    H = np.asarray(H, dtype=np.float64)
    sizes = H.sum(0)
    if np.any(sizes == 0):
        raise EmptyHyperedge(f"hyperedges {np.flatnonzero(sizes == 0).tolist()} are empty")
    return (H.T @ X) / sizes[:, None]


def silhouette(X, labels) -> float:
    """Mean silhouette coefficient with Euclidean distance; singletons score 0."""
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels)
    uniq = np.unique(labels)
    D = cdist(X, X)
    onehot = (labels[:, None] == uniq[None, :]).astype(np.float64)
    sizes = onehot.sum(0)
    sums = D @ onehot  # (n, k) total distance to each cluster
    own = np.searchsorted(uniq, labels)
    n_own = sizes[own]
    a = np.where(n_own > 1, sums[np.arange(len(X)), own] / np.maximum(n_own - 1, 1), 0.0)
    mean_other = sums / sizes
    mean_other[np.arange(len(X)), own] = np.inf
    b = mean_other.min(1)
    s = np.where(n_own > 1, (b - a) / np.maximum(np.maximum(a, b), 1e-300), 0.0)
    s = np.where((n_own > 1) & (np.maximum(a, b) == 0), 0.0, s)
    return float(s.mean())


def quality_metrics(X, hg: Hypergraph) -> dict:
    """Hyperedge entropy (HE), intra-cluster similarity (ICS), inter-cluster
    distance (ICD) and silhouette (SIL) over the foreground nodes."""
    X = np.asarray(X, dtype=np.float64)
    fg = np.flatnonzero(hg.foreground)
    E = hg.n_edges
    if E < 2:
        raise DegenerateHypergraph("ICD and SIL need at least two hyperedges")
    Xf = X[fg]
    hard = hg.hard_assign[fg]
    soft = hg.incidence[fg]
    if np.any(np.bincount(hard, minlength=E) == 0) or np.any(soft.sum(0) == 0):
        raise DegenerateHypergraph("every hyperedge must have a member")

    hard_centroids = np.stack([Xf[hard == e].mean(0) for e in range(E)])
    ics = float(np.mean(cosine_sim_to_centers(Xf, hard_centroids)[np.arange(len(fg)), hard]))
    pair = cdist(hard_centroids, hard_centroids)
    icd = float(pair[np.triu_indices(E, 1)].mean())

    entropies = []
    for e in range(E):
        members = Xf[soft[:, e] == 1]
        m = len(members)
        if m == 1:
            entropies.append(0.0)
            continue
        w = (cosine_sim_to_centers(members, members.mean(0, keepdims=True))[:, 0] + 1.0) / 2.0
        p = w / w.sum() if w.sum() > 0 else np.full(m, 1.0 / m)
        nz = p[p > 0]
        entropies.append(float(-(nz * np.log(nz)).sum() / np.log(m)))
    he = float(np.mean(entropies))

    if len(np.unique(hard)) < 2:
        raise DegenerateHypergraph("silhouette needs two populated hyperedges")
    return {"HE": he, "ICS": ics, "ICD": icd, "SIL": silhouette(Xf, hard)}
