import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from cif.errors import (DegenerateHypergraph, EmptyHyperedge, InvalidConfig,
                        TooFewForeground, TooFewPoints)
from cif.feature_io import ForegroundMask, PatchGrid
from cif.hypergraph import (BACKGROUND, Hypergraph, SahcConfig,
                            assign_incidence, build_sahc,
                            cosine_sim_to_centers, hyperedge_features, kmeans,
                            quality_metrics, silhouette)


def two_blobs(rng, n=10, eps=0.05):
    a = rng.normal(0, eps, (n, 2))
    b = rng.normal(0, eps, (n, 2)) + 10
    return np.concatenate([a, b])


# ----------------------------------------------------------------- kmeans

def test_kmeans_separates_blobs():
    X = two_blobs(np.random.default_rng(0))
    centers, assign = kmeans(X, 2, seed=3)
    assert len(set(assign[:10])) == 1 and len(set(assign[10:])) == 1
    assert assign[0] != assign[10]
    # brute force over all 2-partitions that split the two halves differently
    inertia = sum(((X[assign == j] - centers[j]) ** 2).sum() for j in range(2))
    split = ((X[:10] - X[:10].mean(0)) ** 2).sum() + ((X[10:] - X[10:].mean(0)) ** 2).sum()
    assert inertia == pytest.approx(split)


def test_kmeans_identical_points():
    X = np.tile([[1.5, -2.0, 3.0]], (6, 1))
    centers, assign = kmeans(X, 1)
    assert np.array_equal(centers[0], X[0]) and np.all(assign == 0)


def test_kmeans_too_few_points():
    with pytest.raises(TooFewPoints):
        kmeans(np.zeros((3, 2)), 4)


def test_kmeans_repairs_empty_clusters():
    # four coincident points and one outlier, k=3: repair keeps every cluster populated
    X = np.array([[0.0, 0], [0, 0], [0, 0], [0, 0], [5, 5]])
    _, assign = kmeans(X, 3, n_init=1)
    assert np.all(np.bincount(assign, minlength=3) >= 1)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**16), k=st.integers(1, 5))
def test_kmeans_deterministic_and_complete(seed, k):
    X = np.random.default_rng(seed).standard_normal((12, 3))
    c1, a1 = kmeans(X, k, seed=seed)
    c2, a2 = kmeans(X, k, seed=seed)
    assert np.array_equal(c1, c2) and np.array_equal(a1, a2)
    assert np.all(np.bincount(a1, minlength=k) >= 1)


# ----------------------------------------------------------------- cosine

def test_cosine_examples():
    assert cosine_sim_to_centers([[1, 0]], [[1, 0]])[0, 0] == 1.0
    assert cosine_sim_to_centers([[1, 0]], [[0, 1]])[0, 0] == 0.0
    assert cosine_sim_to_centers([[3, 4]], [[4, 3]])[0, 0] == pytest.approx(0.96, abs=1e-15)
    assert cosine_sim_to_centers([[0, 0]], [[1, 1]])[0, 0] == 0.0


# ------------------------------------------------------------------- SAHC

def grid_from(X, rows=None):
    X = np.asarray(X, dtype=np.float32)
    return PatchGrid(1, len(X), X) if rows is None else PatchGrid(rows, len(X) // rows, X)


def test_sahc_identical_features_single_edge():
    X = np.tile([[1.0, 2.0]], (6, 1))
    bits = np.array([1, 1, 0, 1, 1, 1], bool)
    hg = build_sahc(grid_from(X), ForegroundMask(1, 6, bits), SahcConfig(n_edges=1))
    assert hg.incidence[:, 0].tolist() == bits.astype(int).tolist()
    assert hg.hard_assign.tolist() == [0, 0, BACKGROUND, 0, 0, 0]


def test_sahc_high_tau_gives_hard_partition():
    rng = np.random.default_rng(1)
    X = np.concatenate([rng.normal(0, 0.02, (8, 2)) + [1, 0], rng.normal(0, 0.02, (8, 2)) + [0, 1]])
    hg = build_sahc(grid_from(X), ForegroundMask.full(1, 16), SahcConfig(n_edges=2, tau=0.99))
    assert np.array_equal(hg.incidence, hg.hard_incidence())
    assert len(set(hg.hard_assign[:8])) == 1 and hg.hard_assign[0] != hg.hard_assign[8]


def test_midway_node_joins_both_edges():
    centers = np.array([[1.0, 0.0], [0.0, 1.0]])
    X = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    H, hard = assign_incidence(X, centers, 0.5)
    assert H.tolist() == [[1, 0], [0, 1], [1, 1]]
    assert hard.tolist() == [0, 1, 0]


def test_too_few_foreground():
    X = np.random.default_rng(0).standard_normal((4, 3))
    with pytest.raises(TooFewForeground):
        build_sahc(grid_from(X), ForegroundMask(1, 4, [1, 1, 0, 0]), SahcConfig(n_edges=3))


def test_invalid_sahc_config():
    with pytest.raises(InvalidConfig):
        SahcConfig(tau=1.5)
    with pytest.raises(InvalidConfig):
        SahcConfig(n_edges=0)


def random_instance(seed, n=30, dim=5, k=3):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, dim)).astype(np.float32)
    bits = rng.random(n) < 0.8
    bits[:k] = True
    return PatchGrid(1, n, X), ForegroundMask(1, n, bits)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), k=st.integers(1, 4), tau=st.floats(0, 1))
def test_sahc_invariants(seed, k, tau):
    grid, mask = random_instance(seed, k=k)
    hg = build_sahc(grid, mask, SahcConfig(n_edges=k, tau=tau, seed=seed))
    fg = mask.bits
    assert np.all(hg.incidence[~fg] == 0) and np.all(hg.hard_assign[~fg] == BACKGROUND)
    assert np.all(hg.incidence[fg].sum(1) >= 1)
    assert np.all(hg.incidence[np.flatnonzero(fg), hg.hard_assign[fg]] == 1)
    assert np.all(hg.incidence.sum(0) >= 1)
    again = build_sahc(grid, mask, SahcConfig(n_edges=k, tau=tau, seed=seed))
    assert np.array_equal(hg.incidence, again.incidence)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), t1=st.floats(0, 1), t2=st.floats(0, 1))
def test_tau_monotone(seed, t1, t2):
    lo, hi = min(t1, t2), max(t1, t2)
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((20, 4))
    C = rng.standard_normal((3, 4))
    H_lo, _ = assign_incidence(X, C, lo)
    H_hi, _ = assign_incidence(X, C, hi)
    assert np.all(H_hi <= H_lo)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_incidence_is_permutation_equivariant(seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((15, 4))
    C = rng.standard_normal((3, 4))
    perm = rng.permutation(15)
    H, hard = assign_incidence(X, C, 0.5)
    Hp, hardp = assign_incidence(X[perm], C, 0.5)
    assert np.array_equal(Hp, H[perm]) and np.array_equal(hardp, hard[perm])


def test_hypergraph_json_round_trip(tmp_path):
    grid, mask = random_instance(4)
    hg = build_sahc(grid, mask, SahcConfig(n_edges=3))
    hg.save(tmp_path / "hg.json")
    back = Hypergraph.from_json((tmp_path / "hg.json").read_text())
    assert np.array_equal(back.incidence, hg.incidence)
    assert np.array_equal(back.hard_assign, hg.hard_assign)
    assert np.array_equal(back.centers, hg.centers)


# ------------------------------------------------------- edge features

def test_hyperedge_features_examples():
    assert hyperedge_features([[4.0, 5.0]], [[1]]).tolist() == [[4.0, 5.0]]
    assert hyperedge_features([[0.0, 0.0], [2.0, 2.0]], [[1], [1]]).tolist() == [[1.0, 1.0]]
    X = [[0.0, 0.0], [2.0, 0.0], [0.0, 4.0]]
    H = [[1, 0], [1, 1], [0, 1]]
    assert hyperedge_features(X, H).tolist() == [[1.0, 0.0], [1.0, 2.0]]
    with pytest.raises(EmptyHyperedge):
        hyperedge_features(X, [[1, 0], [1, 0], [1, 0]])


# --------------------------------------------------------- quality metrics

def hg_from_labels(labels, incidence=None):
    labels = np.asarray(labels)
    k = labels.max() + 1
    H = np.zeros((len(labels), k), np.uint8) if incidence is None else np.asarray(incidence, np.uint8)
    if incidence is None:
        H[np.arange(len(labels)), labels] = 1
    return Hypergraph(H, labels, np.zeros((k, 1)))


def test_point_mass_clusters():
    X = np.array([[3.0, 0.0]] * 3 + [[3.0, 4.0]] * 2)
    q = quality_metrics(X, hg_from_labels([0, 0, 0, 1, 1]))
    assert q["ICS"] == pytest.approx(1.0, abs=1e-12)
    assert q["ICD"] == pytest.approx(4.0, abs=1e-12)
    assert q["SIL"] == pytest.approx(1.0, abs=1e-12)


def test_single_member_edges_have_zero_entropy():
    X = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    assert quality_metrics(X, hg_from_labels([0, 1, 2]))["HE"] == 0.0


def test_silhouette_matches_loops():
    rng = np.random.default_rng(9)
    X = rng.standard_normal((20, 3))
    labels = rng.integers(0, 3, 20)
    assert silhouette(X, labels) == pytest.approx(oracles.silhouette_loops(X, labels.tolist()), abs=1e-9)


def test_background_nodes_are_ignored():
    X = np.array([[3.0, 0.0], [3.0, 0.0], [3.0, 4.0], [3.0, 4.0], [100.0, -7.0]])
    with_bg = quality_metrics(X, hg_from_labels([0, 0, 1, 1, BACKGROUND],
                                               [[1, 0], [1, 0], [0, 1], [0, 1], [0, 0]]))
    without = quality_metrics(X[:4], hg_from_labels([0, 0, 1, 1]))
    assert with_bg == without


def test_degenerate_hypergraph():
    X = np.ones((4, 2))
    with pytest.raises(DegenerateHypergraph):
        quality_metrics(X, hg_from_labels([0, 0, 0, 0]))
    with pytest.raises(DegenerateHypergraph):
        quality_metrics(X, hg_from_labels([0, 0, 0, 0], [[1, 0]] * 4))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), k=st.integers(2, 4))
def test_metric_ranges(seed, k):
    grid, mask = random_instance(seed, n=24, k=k)
    hg = build_sahc(grid, mask, SahcConfig(n_edges=k, seed=seed))
    if len(np.unique(hg.hard_assign[hg.foreground])) < k:
        return
    q = quality_metrics(grid.data, hg)
    assert -1 <= q["SIL"] <= 1 and -1 <= q["ICS"] <= 1
    assert 0 <= q["HE"] <= 1 + 1e-12 and q["ICD"] >= 0
