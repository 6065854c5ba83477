import numpy as np
import pytest

from conftest import exact_tensor
from temponet.cp import (CpModel, core_consistency, cp_als, load_model, normalize_components,
                         reconstruct, relative_fit, save_model)
from temponet.tensor import from_edge_events


def _model(scales, a, tl):
    a, tl = np.asarray(a, float), np.asarray(tl, float)
    return CpModel(len(scales), np.asarray(scales, float), a, tl)


def test_zero_tensor_gives_zero_scales():
    m = cp_als(from_edge_events([], 5, 4), 2)
    assert np.all(m.scales == 0)
    assert m.fit_error == 0


@pytest.mark.parametrize("rank", [0, 6, 10])
def test_rank_out_of_range(rank):
    with pytest.raises(ValueError, match="rank"):
        cp_als(from_edge_events([], 5, 6), rank)


def test_rank_one_recovery(rng):
    a = rng.uniform(0.1, 1, (8, 1))
    tl = rng.uniform(0.1, 1, (6, 1))
    x = exact_tensor(a, tl)
    m = cp_als(x, 1, tol=1e-12)
    assert relative_fit(m, x) <= 1e-4


def test_two_disjoint_blocks(rng):
    a = np.zeros((10, 2))
    a[:5, 0] = 1
    a[5:, 1] = 1
    tl = np.zeros((8, 2))
    tl[:4, 0] = 2
    tl[4:, 1] = 3
    m = cp_als(exact_tensor(a, tl), 2, seed=3)
    blocks = {frozenset(range(5)), frozenset(range(5, 10))}
    found = {frozenset(np.flatnonzero(g.memberships > 0.5)) for g in normalize_components(m)}
    assert found == blocks


def test_objective_never_increases(rng):
    a = rng.uniform(0, 1, (12, 3))
    tl = rng.uniform(0, 1, (10, 3))
    x = exact_tensor(a, tl)
    m = cp_als(x, 3, tol=1e-10, seed=1)
    hist = np.array(m.history)
    assert np.all(np.diff(hist) <= 1e-9)
    assert np.all(m.node_loadings >= 0) and np.all(m.time_loadings >= 0)
    assert np.all(m.scales >= 0)


def test_deterministic_for_seed(rng):
    x = exact_tensor(rng.uniform(0, 1, (6, 2)), rng.uniform(0, 1, (5, 2)))
    m1, m2 = cp_als(x, 2, seed=9), cp_als(x, 2, seed=9)
    assert np.array_equal(m1.node_loadings, m2.node_loadings)
    assert np.array_equal(m1.time_loadings, m2.time_loadings)


def test_masked_fit_ignores_diagonal(rng):
    a = rng.uniform(0.2, 1, (8, 1))
    tl = rng.uniform(0.2, 1, (6, 1))
    x = exact_tensor(a, tl)
    dense = x.to_dense()
    idx = np.arange(8)
    dense[idx, idx, :] += 50.0
    i, j, t = np.nonzero(dense)
    keep = i <= j
    from temponet.tensor import from_arrays
    noisy = from_arrays(8, 6, i[keep], j[keep], t[keep], dense[i[keep], j[keep], t[keep]])
    m = cp_als(noisy, 1, tol=1e-12, mask_diagonal=True)
    assert relative_fit(m, noisy, mask_diagonal=True) <= 1e-3


def test_reconstruct_examples():
    zero = _model([0.0], [[0.0], [0.0]], [[0.0]])
    assert not reconstruct(zero).any()
    m = _model([2.0], [[1.0], [1.0]], [[1.0]])
    assert np.all(reconstruct(m) == 2)


def test_reconstruct_symmetric(rng):
    m = _model(rng.uniform(0, 2, 3), rng.uniform(0, 1, (5, 3)), rng.uniform(0, 1, (4, 3)))
    x = reconstruct(m)
    assert np.array_equal(x, x.transpose(1, 0, 2))


def test_relative_fit_fixed_point(rng):
    x = exact_tensor(rng.uniform(0.1, 1, (7, 2)), rng.uniform(0.1, 1, (6, 2)))
    m = cp_als(x, 2, tol=1e-12, seed=2)
    assert relative_fit(cp_als(x, 2, tol=1e-12, seed=2), x) <= 1e-4
    with pytest.raises(ValueError, match="shape"):
        relative_fit(m, from_edge_events([], 3, 6))


def test_relative_fit_zero_tensor():
    m = cp_als(from_edge_events([], 3, 2), 1)
    assert relative_fit(m, from_edge_events([], 3, 2)) == 0


def test_normalize_example():
    gm = normalize_components(_model([1.0], [[2.0], [1.0]], [[3.0]]))[0]
    assert np.allclose(gm.memberships, [1, 0.5])
    assert np.allclose(gm.rate_samples, [12])
    assert gm.memberships[0] * gm.memberships[1] * gm.rate_samples[0] == pytest.approx(6)


def test_normalize_idempotent_and_zero():
    gm = normalize_components(_model([1.0], [[1.0], [0.25]], [[4.0]]))[0]
    assert np.array_equal(gm.memberships, [1.0, 0.25])
    assert np.array_equal(gm.rate_samples, [4.0])
    z = normalize_components(_model([0.0], [[0.0], [0.0]], [[1.0]]))[0]
    assert z.is_zero and not z.rate_samples.any()


def test_core_consistency_exact_rank_one(rng):
    x = exact_tensor(rng.uniform(0.1, 1, (6, 1)), rng.uniform(0.1, 1, (5, 1)))
    cc = core_consistency(x, cp_als(x, 1, tol=1e-12))
    assert cc.defined and cc.score >= 99


def test_core_consistency_rank_deficient_is_flagged():
    m = _model([1.0, 1.0], [[1.0, 1.0], [1.0, 1.0], [0.0, 0.0]], [[1.0, 1.0], [1.0, 1.0]])
    x = from_edge_events([(0, 1, 0)], 3, 2)
    cc = core_consistency(x, m)
    assert cc.rank_deficient and "rank" in cc.note
    assert cc.score < 100


def test_core_consistency_drops_when_overfitted(rng):
    x = exact_tensor(rng.uniform(0, 1, (12, 2)), rng.uniform(0, 1, (10, 2)))
    right = core_consistency(x, cp_als(x, 2, tol=1e-12))
    over = core_consistency(x, cp_als(x, 4, tol=1e-12))
    assert right.score >= 99 and over.score < right.score


def test_model_json_round_trip(tmp_path, rng):
    x = exact_tensor(rng.uniform(0, 1, (5, 2)), rng.uniform(0, 1, (4, 2)))
    m = cp_als(x, 2)
    save_model(m, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    assert np.array_equal(back.node_loadings, m.node_loadings)
    assert np.array_equal(back.scales, m.scales)
    assert back.iterations == m.iterations
