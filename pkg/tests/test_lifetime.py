import numpy as np
import pytest

from temponet.clustering import ClusterRecord
from temponet.cp import GenerativeModel
from temponet.lifetime import (NoiseEstimate, PiecewiseRate, Segment, cluster_rate,
                               default_threshold, detect_lifetime, estimate_noise, expand_steps,
                               fit_rate, load_lifetimes, network_threshold, runs,
                               save_lifetimes, segment_error, segment_series,
                               sliding_window_filter, write_rates_csv)
from temponet.tensor import from_edge_events


def flat_rate(value, horizon):
    return PiecewiseRate([Segment(0, horizon - 1, 0.0, float(value))])


def planted_series(rng, horizon, n_segments, min_len=2):
    n_segments = min(n_segments, horizon // min_len)
    cuts = np.sort(rng.choice(np.arange(min_len, horizon - min_len + 1), n_segments - 1,
                              replace=False)) if n_segments > 1 else np.array([], int)
    while n_segments > 1 and (np.diff(np.concatenate([[0], cuts, [horizon]])) < min_len).any():
        cuts = np.sort(rng.choice(np.arange(min_len, horizon - min_len + 1), n_segments - 1,
                                  replace=False))
    bounds = np.concatenate([[0], cuts, [horizon]])
    y = np.empty(horizon)
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        # each piece ramps between two positive levels, so the truth stays non-negative
        y[lo:hi] = np.linspace(rng.uniform(0.5, 3), rng.uniform(0.5, 3), hi - lo)
    return y, bounds


def test_filter_examples():
    y = np.array([0.0, 3.0, 0.0])
    assert np.array_equal(sliding_window_filter(y, 1), y)
    assert np.allclose(sliding_window_filter(np.full(7, 2.5), 5), 2.5)
    assert np.allclose(sliding_window_filter(y, 3), [1.5, 1, 1.5])
    for bad in (2, 5, 0):
        with pytest.raises(ValueError):
            sliding_window_filter(y, bad)


def test_noise_examples():
    flat = estimate_noise(np.full(10, 4.0), 3)
    assert flat.mean == pytest.approx(0) and flat.std == pytest.approx(0)
    ramp = estimate_noise(np.arange(10.0), 1)
    assert ramp.mean == 0 and ramp.std == 0
    with pytest.raises(ValueError):
        estimate_noise([1.0], 1)


def test_noise_monte_carlo():
    # with window 5 the interior residual is -(4/5) e_j + (1/5) sum of 4 neighbours
    sigma = 0.3
    expected = sigma * np.sqrt(16 / 25 + 4 / 25)
    for seed in range(10):
        y = 2.0 + np.random.default_rng(seed).normal(0, sigma, 2000)
        est = estimate_noise(y, 5)
        assert abs(est.std - expected) <= 0.25 * expected


def test_threshold_examples():
    assert default_threshold(NoiseEstimate(0, 0, 5)) == 0
    assert default_threshold(NoiseEstimate(0.1, 0.2, 5)) == pytest.approx(0.49)
    assert default_threshold(NoiseEstimate(-0.1, 0.2, 5)) == pytest.approx(0.25)


def test_segment_constant_and_ramp():
    const = segment_series(np.full(20, 3.0), 0.0)
    assert len(const.segments) == 1 and const.segments[0].slope == pytest.approx(0)
    ramp = segment_series(2.0 + 0.5 * np.arange(30), 0.0)
    (seg,) = ramp.segments
    assert seg.slope == pytest.approx(0.5) and seg.intercept == pytest.approx(2.0)


def test_segment_step_breakpoint():
    y = np.concatenate([np.ones(50), np.full(50, 5.0)])
    one_line = segment_error(y, 0, 99)
    rate = segment_series(y, 0.01 * one_line)
    assert len(rate.segments) == 2
    assert abs(rate.segments[1].start - 50) <= 1


def test_segment_rejects_short_or_negative():
    with pytest.raises(ValueError):
        segment_series([1.0], 0.0)
    with pytest.raises(ValueError):
        segment_series([1.0, 2.0], -1.0)


def test_segments_partition_axis(rng):
    y = rng.normal(0, 1, 57)
    rate = segment_series(y, 0.5)
    assert rate.segments[0].start == 0 and rate.segments[-1].end == 56
    for a, b in zip(rate.segments, rate.segments[1:]):
        assert b.start == a.end + 1


def _sse(y, lo, hi):
    t = np.arange(lo, hi + 1)
    if t.size == 1:
        return 0.0
    coef = np.polyfit(t, y[lo:hi + 1], 1)
    return float(((np.polyval(coef, t) - y[lo:hi + 1]) ** 2).sum())


def _optimal_sse(y, d):
    n = y.size
    best = np.full((d + 1, n + 1), np.inf)
    best[0, 0] = 0.0
    for k in range(1, d + 1):
        for end in range(1, n + 1):
            for start in range(end):
                best[k, end] = min(best[k, end], best[k - 1, start] + _sse(y, start, end - 1))
    return best[d, n]


def test_greedy_against_exhaustive_optimum():
    rng = np.random.default_rng(7)
    for _ in range(15):
        n = int(rng.integers(8, 25))
        y, _ = planted_series(rng, n, int(rng.integers(1, 4)), 3)
        y = y + rng.normal(0, 0.05, n)
        e_max = float(rng.uniform(0.001, 0.05))
        rate = segment_series(y, e_max)
        total = sum(_sse(y, s.start, s.end) for s in rate.segments)
        assert total >= _optimal_sse(y, len(rate.segments)) - 1e-9
        for s in rate.segments:
            mse = _sse(y, s.start, s.end) / len(s)
            assert segment_error(y, s.start, s.end) <= e_max + 1e-12
            assert mse <= e_max + 1e-12


def test_segment_count_monotone_in_threshold():
    rng = np.random.default_rng(11)
    for _ in range(10):
        y, _ = planted_series(rng, 120, 4, 10)
        y = y + rng.normal(0, 0.1, y.size)
        counts = [len(segment_series(y, e).segments) for e in np.geomspace(1e-4, 5, 25)]
        assert all(b <= a for a, b in zip(counts, counts[1:]))


def test_reconstruction_fidelity():
    sigma, ok, seeds = 0.05, 0, 40
    for seed in range(seeds):
        rng = np.random.default_rng(seed)
        truth, _ = planted_series(rng, 200, 3, 30)
        noisy = truth + rng.normal(0, sigma, truth.size)
        fitted = fit_rate(noisy).values()
        ok += np.max(np.abs(fitted - truth)) <= 5 * sigma
    assert ok / seeds >= 0.95


def test_cluster_rate_examples():
    gm = GenerativeModel(0, np.array([1.0, 0.5, 1.0]), np.ones(3))
    both = ClusterRecord(0, [0, 2], 1.0)
    assert cluster_rate(both, gm, flat_rate(3.0, 3), 1) == pytest.approx(3.0)
    assert cluster_rate(both, gm, flat_rate(0.0, 3), 1) == 0
    assert cluster_rate(ClusterRecord(0, [0, 1], 1.0), gm, flat_rate(4.0, 3), 0) == \
        pytest.approx(2.25)


def test_rate_clamped_at_zero():
    rate = PiecewiseRate([Segment(0, 3, -1.0, 1.0)])
    assert np.all(rate.values() >= 0) and rate(3) == 0


def test_network_threshold_examples():
    assert not network_threshold(from_edge_events([], 4, 10)).any()
    events = [(i, j, t) for t in range(20) for i in range(3) for j in range(i + 1, 3)]
    x = from_edge_events(events, 3, 20)
    thr = network_threshold(x)
    assert np.allclose(thr, 6 / 9)
    assert np.allclose(network_threshold(x.scaled(2.5)), 2.5 * thr)


def test_detect_lifetime_examples():
    gm = GenerativeModel(0, np.ones(2), np.ones(10))
    c = ClusterRecord(0, [0, 1], 1.0)
    assert detect_lifetime(c, gm, flat_rate(2.0, 10), np.ones(10)).active_steps.size == 10
    assert detect_lifetime(c, gm, flat_rate(1.0, 10), np.ones(10)).active_steps.size == 0
    t = np.arange(1000)
    square = np.where((t // 50) % 2 == 0, 2.0, 0.0)
    rate = PiecewiseRate([Segment(s, s + 49, 0.0, float(square[s])) for s in range(0, 1000, 50)])
    lt = detect_lifetime(c, gm, rate, np.ones(1000))
    assert lt.intervals == [[s, s + 49] for s in range(0, 1000, 100)]
    with pytest.raises(ValueError):
        detect_lifetime(c, gm, rate, np.ones(5))


def test_silent_cluster_has_empty_lifetime():
    gm = GenerativeModel(0, np.ones(2), np.zeros(10))
    events = [(2, 3, t) for t in range(10)]
    thr = network_threshold(from_edge_events(events, 4, 10))
    lt = detect_lifetime(ClusterRecord(0, [0, 1], 0.0), gm, fit_rate(np.zeros(10)), thr)
    assert lt.active_steps.size == 0


def _square_lifetime(period, w, horizon=1000, level=1.0):
    t = np.arange(horizon)
    fine = np.where((t % period) < period // 2, level, 0.0)
    pad = (-horizon) % w
    coarse = np.concatenate([fine, np.zeros(pad)]).reshape(-1, w).sum(1)
    gm = GenerativeModel(0, np.ones(2), coarse)
    rate = fit_rate(coarse)
    thr = np.full(coarse.size, 0.5 * level * w)
    return detect_lifetime(ClusterRecord(0, [0, 1], 1.0), gm, rate, thr)


def test_periodicity_kept_at_small_granularity():
    period, w = 100, 8
    lt = _square_lifetime(period, w)
    starts = np.array([s for s, _ in lt.intervals]) * w
    assert len(starts) == 10
    assert np.all(np.abs(np.diff(starts) - period) <= w)


def test_periodicity_lost_at_large_granularity():
    assert len(_square_lifetime(100, 128).intervals) < 10


def test_runs_and_expand():
    assert runs([1, 2, 3, 7, 9, 10]) == [[1, 3], [7, 7], [9, 10]]
    assert runs([]) == []
    assert expand_steps([0, 2], 3, 8).tolist() == [0, 1, 2, 6, 7]
    assert expand_steps([4], 1, 8).tolist() == [4]


def test_lifetimes_json_and_rates_csv(tmp_path):
    gm = GenerativeModel(0, np.ones(2), np.arange(4.0))
    rate = fit_rate(gm.rate_samples)
    lt = detect_lifetime(ClusterRecord(0, [0, 1], 1.0), gm, rate, np.full(4, 1.5))
    save_lifetimes([(lt, rate)], tmp_path / "l.json")
    (back, back_rate), = load_lifetimes(tmp_path / "l.json")
    assert back.intervals == lt.intervals == [[2, 3]]
    assert np.allclose(back_rate.values(), rate.values())
    write_rates_csv(tmp_path / "r.csv", [gm], [rate], np.full(4, 1.5))
    lines = (tmp_path / "r.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == "t,model_index,rate_sample,fitted_rate,network_threshold"
    assert len(lines) == 5
