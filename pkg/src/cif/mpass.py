"""Bidirectional training-free hypergraph message passing between a test
sample and a memory bank, plus the ANND / Procrustes diagnostics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.spatial.distance import cdist

from .errors import (DegenerateCloud, EmptySet, InvalidConfig, KTooLarge,
                     ShapeMismatch)
from .hypergraph import cosine_sim_to_centers


@dataclass
class MpConfig:
    alpha: float = 0.9
    layers: int = 1
    k_cross: int = 5

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise InvalidConfig("alpha must lie in [0, 1]")
        if self.layers < 1:
            raise InvalidConfig("layers must be >= 1")
        if self.k_cross < 1:
            raise InvalidConfig("k_cross must be >= 1")


@dataclass
class JointHypergraph:
    X_joint: np.ndarray  # (N+A, dim), test rows first
    H_joint: np.ndarray  # (N+A, 2*E + N + A)
    n_test: int
    n_mem: int
    e_num: int


def _top_k(sim, k):
    # stable sort keeps the lowest index first among equal similarities
    return np.argsort(-sim, axis=1, kind="stable")[:, :k]


def build_cross_hyperedges(X_test, X_mem, k: int) -> np.ndarray:
    """Cross-domain incidence of shape (N+A, N+A).

    Column i < N holds test node i and its k most cosine-similar memory nodes;
    column N+j holds memory node j and its k most similar test nodes.
    """
    n, a = len(X_test), len(X_mem)
    if k > min(n, a):
        raise KTooLarge(f"k={k} exceeds min(N={n}, A={a})")
    sim = cosine_sim_to_centers(X_test, X_mem)
    H = np.zeros((n + a, n + a), dtype=np.uint8)
    cols = np.arange(n)
    H[cols, cols] = 1
    H[n + _top_k(sim, k), cols[:, None]] = 1
    mcols = np.arange(a)
    H[n + mcols, n + mcols] = 1
    H[_top_k(sim.T, k), n + mcols[:, None]] = 1
    return H


def build_joint(H_test, H_mem_struct, H_cross, X_test=None, X_mem=None) -> JointHypergraph:
    H_test = np.asarray(H_test)
    H_mem = np.asarray(H_mem_struct)
    H_cross = np.asarray(H_cross)
    n, e = H_test.shape
    a, e2 = H_mem.shape
    if e != e2:
        raise ShapeMismatch(f"test has {e} hyperedges, memory has {e2}")
    if H_cross.shape != (n + a, n + a):
        raise ShapeMismatch(f"cross incidence must be {(n + a, n + a)}, got {H_cross.shape}")
    H = np.zeros((n + a, 2 * e + n + a), dtype=np.uint8)
    H[:n, :e] = H_test
    H[n:, e:2 * e] = H_mem
    H[:, 2 * e:] = H_cross
    if X_test is not None and X_mem is not None:
        X = np.concatenate([np.asarray(X_test, np.float64), np.asarray(X_mem, np.float64)])
    else:
        X = np.zeros((n + a, 0))
    return JointHypergraph(X, H, n, a, e)


def _drop_empty(H):
    H = np.asarray(H, dtype=np.float64)
    return H[:, H.sum(0) > 0]


def transition_matrix(H) -> np.ndarray:
    """Dv^-1/2 (H De^-1 H^T + I) Dv^-1/2 with empty hyperedges dropped."""
    H = _drop_empty(H)
    de = H.sum(0)
    W = (H / de) @ H.T + np.eye(H.shape[0])
    dv = W.sum(1)
    # one rounding per entry; exact whenever dv_i * dv_j is a perfect square
    return W / np.sqrt(np.outer(dv, dv))


def mp_kernel(A_trans, alpha: float, layers: int) -> np.ndarray:
    """S = (1-a)^L A^L + a * sum_{l<L} (1-a)^l A^l, by Horner accumulation."""
    A = np.asarray(A_trans, dtype=np.float64)
    eye = np.eye(A.shape[0])
    S = eye.copy()
    beta = 1.0 - alpha
    for _ in range(layers):
        S = alpha * eye + beta * (A @ S)
    return S


class _SparseTransition:
    """Applies A_trans to a dense block without materializing it."""

    def __init__(self, H):
        H = sp.csr_matrix(_drop_empty(H))
        de = np.asarray(H.sum(0)).ravel()
        self.H = H
        self.HDe = H @ sp.diags(1.0 / de)
        ones = np.ones(H.shape[0])
        dv = self.HDe @ (H.T @ ones) + ones
        self.inv = 1.0 / np.sqrt(dv)

    def __matmul__(self, Y):
        Z = self.inv[:, None] * Y
        return self.inv[:, None] * (self.HDe @ (self.H.T @ Z) + Z)


def apply_mp(joint: JointHypergraph, cfg: MpConfig) -> np.ndarray:
    """Updated test features: the first N rows of S @ X_joint."""
    X = np.asarray(joint.X_joint, dtype=np.float64)
    A = _SparseTransition(joint.H_joint)
    Y = X
    beta = 1.0 - cfg.alpha
    for _ in range(cfg.layers):
        Y = cfg.alpha * X + beta * (A @ Y)
    return Y[:joint.n_test]


def message_pass(X_test, H_test, X_mem, H_mem, cfg: MpConfig) -> np.ndarray:
    """Convenience wrapper: build the joint hypergraph and return new test features."""
    k = min(cfg.k_cross, len(X_test), len(X_mem))
    H_cross = build_cross_hyperedges(X_test, X_mem, k)
    joint = build_joint(H_test, H_mem, H_cross, X_test, X_mem)
    return apply_mp(joint, cfg)


def annd(X_test, X_mem) -> float:
    """Average distance from each test node to its nearest memory node."""
    X_test = np.asarray(X_test, dtype=np.float64)
    X_mem = np.asarray(X_mem, dtype=np.float64)
    if len(X_test) == 0 or len(X_mem) == 0:
        raise EmptySet("ANND needs non-empty test and memory sets")
    return float(cdist(X_test, X_mem).min(1).mean())


def pcs(X_before, X_after) -> float:
    """Procrustes similarity: 1 - residual of the best rotation+scale fit of the
    centered `X_after` by the centered `X_before`, relative to |X_after|^2.
    Reflections are allowed."""
    X = np.asarray(X_before, dtype=np.float64)
    Y = np.asarray(X_after, dtype=np.float64)
    if X.shape != Y.shape:
        raise ShapeMismatch("point clouds must have equal shapes")
    if len(X) < 2:
        raise DegenerateCloud("need at least two points")
    Xc = X - X.mean(0)
    Yc = Y - Y.mean(0)
    nx = (Xc ** 2).sum()
    ny = (Yc ** 2).sum()
    if nx == 0 or ny == 0:
        raise DegenerateCloud("centered cloud has zero norm")
    if np.array_equal(X, Y):
        return 1.0
    U, sig, Vt = np.linalg.svd(Yc.T @ Xc)
    # Yc^T Xc = U S V^T, so the maximizer of tr(R^T Xc^T Yc) is V U^T
    R = Vt.T @ U.T
    s = sig.sum() / nx
    resid = ((Yc - s * Xc @ R) ** 2).sum()
    return float(1.0 - resid / ny)
