import numpy as np
import pytest

from temponet.baselines import (BcConfig, EcConfig, bc_ranked_list, ec_clustering,
                                ec_pair_rate, ec_to_clusters)
from temponet.cp import CpModel
from temponet.tensor import from_arrays, from_edge_events


def model(a, tl, scales):
    a, tl = np.asarray(a, float), np.asarray(tl, float)
    return CpModel(len(scales), np.asarray(scales, float), a, tl)


def two_cliques(horizon, blank=()):
    events = []
    for t in range(horizon):
        if t in blank:
            continue
        for block in (range(0, 5), range(5, 10)):
            events += [(i, j, t) for i in block for j in block if i < j]
    return from_edge_events(events, 10, horizon, self_loops_allowed=False)


def test_bc_clean_split():
    a = np.array([[1.0]] * 5 + [[0.0]] * 5)
    ranked = bc_ranked_list(model(a, [[1.0]], [1.0]))
    assert ranked[0].members == tuple(range(5)) and not ranked[0].filtered
    assert ranked[1].members == tuple(range(5, 10)) and ranked[1].filtered


def test_bc_nothing_above_threshold():
    a = np.array([[1.0], [0.4], [0.3]])
    ranked = bc_ranked_list(model(a, [[1.0]], [1.0]), threshold=0.99)
    # the max membership is 1 after normalization, so only node 0 clears 0.99
    assert ranked[0].members == (0,)
    flat = bc_ranked_list(model(np.zeros((3, 1)), [[1.0]], [1.0]))
    assert flat[0].members == () and flat[0].filtered
    assert flat[1].members == (0, 1, 2)


def test_bc_order_by_norm():
    a = np.eye(4)[:, :2]  # components on nodes 0 and 1
    m = model(a, [[1.0, 1.0]], [2.0, 10.0])
    ranked = bc_ranked_list(m)
    assert [(c.model_index, c.filtered) for c in ranked] == \
        [(1, False), (0, False), (1, True), (0, True)]
    assert ranked[0].so_score == pytest.approx(10.0)


def test_bc_partition_and_permutation_invariance(rng):
    a = rng.uniform(0, 1, (12, 3))
    tl = rng.uniform(0, 1, (5, 3))
    s = np.array([1.0, 3.0, 2.0])
    ranked = bc_ranked_list(model(a, tl, s))
    for r in range(3):
        parts = [set(c.members) for c in ranked if c.model_index == r]
        assert parts[0] | parts[1] == set(range(12)) and not parts[0] & parts[1]
    perm = [2, 0, 1]
    moved = bc_ranked_list(model(a[:, perm], tl[:, perm], s[perm]))
    assert [c.members for c in moved] == [c.members for c in ranked]


def test_bc_threshold_validated():
    with pytest.raises(ValueError):
        BcConfig(1.0)
    with pytest.raises(ValueError):
        EcConfig(beta=1.5)


def test_ec_two_cliques_separated():
    labels = ec_clustering(two_cliques(6), EcConfig(k=2))
    for row in labels:
        assert len(set(row[:5])) == 1 and len(set(row[5:])) == 1 and row[0] != row[5]


def test_ec_blank_snapshot_follows_previous():
    labels = ec_clustering(two_cliques(4, blank=(2,)), EcConfig(k=2, beta=0.5))
    assert len(set(labels[2][:5])) == 1 and labels[2][0] != labels[2][5]


def test_ec_beta_zero_is_per_snapshot():
    rng = np.random.default_rng(2)
    n, h = 12, 5
    i, j = np.triu_indices(n, 1)
    t = np.repeat(np.arange(h), i.size)
    counts = rng.poisson(0.6, i.size * h)
    x = from_arrays(n, h, np.tile(i, h), np.tile(j, h), t, counts, False)
    cfg = EcConfig(beta=0.0, k=3, seed=4)
    full = ec_clustering(x, cfg)
    seeds = np.random.SeedSequence(4).spawn(h)
    from temponet.baselines import _spectral_labels
    for step in range(h):
        alone = _spectral_labels(x.frontal_slice(step), 3, np.random.default_rng(seeds[step]), 3)[0]
        assert np.array_equal(full[step], alone)


def test_ec_rejects_large_k():
    with pytest.raises(ValueError):
        ec_clustering(two_cliques(2), EcConfig(k=11))


def test_ec_to_clusters_examples():
    same = np.array([[0, 0, 1, 1]] * 4)
    records, lifetimes = ec_to_clusters(same)
    assert [r.members for r in records] == [(0, 1), (2, 3)]
    assert all(lt.tolist() == [0, 1, 2, 3] for lt in lifetimes)
    alt = np.array([[0, 0, 1, 1], [0, 1, 1, 1]] * 2)
    records, lifetimes = ec_to_clusters(alt)
    found = {r.members: lt.tolist() for r, lt in zip(records, lifetimes)}
    assert found[(0, 1)] == [0, 2]
    fresh = np.array([[0, 0, 0, 1], [0, 1, 1, 1]])
    records, lifetimes = ec_to_clusters(fresh)
    assert all(lt.size == 1 for lt in lifetimes)
    assert [len(r) for r in records] == sorted((len(r) for r in records), reverse=True)


def test_ec_fuzzy_matching():
    rows = np.array([[0, 0, 0, 0, 1], [0, 0, 0, 1, 1]])
    records, lifetimes = ec_to_clusters(rows, min_jaccard=0.7)
    assert lifetimes[0].tolist() == [0, 1]


def test_ec_disjoint_per_snapshot():
    labels = ec_clustering(two_cliques(3), EcConfig(k=3))
    for row in labels:
        cells = [set(np.flatnonzero(row == c)) for c in np.unique(row)]
        assert sum(map(len, cells)) == 10


def test_ec_pair_rate_dense_and_sparse_agree():
    x = two_cliques(4)
    steps = [0, 2]
    sparse = ec_pair_rate(range(5), x, steps)
    dense = ec_pair_rate(range(5), x, steps, x.to_dense())
    assert np.allclose(sparse, dense)
    assert sparse[0] == pytest.approx(20 / 25) and sparse[1] == 0
