"""Piecewise-linear rate reconstruction and cluster lifetime detection."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tensor import DynTensor, empirical_rate_series

DEFAULT_WINDOW = 5  # smoothing of the network-average rate
NOISE_WINDOW = 3  # smoothing used to estimate the noise of a rate series


@dataclass(frozen=True)
class Segment:
    start: int
    end: int  # inclusive
    slope: float
    intercept: float

    def __len__(self):
        return self.end - self.start + 1


@dataclass
class PiecewiseRate:
    segments: list
    source_model: int | None = None

    @property
    def horizon(self) -> int:
        return self.segments[-1].end + 1 if self.segments else 0

    def __call__(self, t) -> float:
        for seg in self.segments:
            if seg.start <= t <= seg.end:
                return max(seg.slope * t + seg.intercept, 0.0)
        raise ValueError(f"t={t} outside [0, {self.horizon - 1}]")

    def values(self) -> np.ndarray:
        out = np.empty(self.horizon)
        for seg in self.segments:
            t = np.arange(seg.start, seg.end + 1)
            out[seg.start:seg.end + 1] = seg.slope * t + seg.intercept
        return np.maximum(out, 0.0)


@dataclass(frozen=True)
class NoiseEstimate:
    mean: float
    std: float
    window: int


@dataclass
class LifetimeSet:
    model_index: int
    members: tuple
    active_steps: np.ndarray
    intervals: list = field(default_factory=list)

    def __post_init__(self):
        self.active_steps = np.asarray(self.active_steps, dtype=int)
        if not self.intervals:
            self.intervals = runs(self.active_steps)


def runs(steps) -> list[list[int]]:
    """Maximal runs of consecutive integers as inclusive ``[start, end]`` pairs."""
    steps = np.asarray(steps, dtype=int)
    if steps.size == 0:
        return []
    breaks = np.flatnonzero(np.diff(steps) != 1)
    starts = np.concatenate([[0], breaks + 1])
    ends = np.concatenate([breaks, [steps.size - 1]])
    return [[int(steps[s]), int(steps[e])] for s, e in zip(starts, ends)]


def sliding_window_filter(series, window: int = DEFAULT_WINDOW) -> np.ndarray:
    """Centered moving average; near the ends the window is truncated to the series."""
    y = np.asarray(series, dtype=float)
    n = y.size
    if window < 1 or window % 2 == 0 or window > n:
        raise ValueError(f"window must be odd and in [1, {n}], got {window}")
    half = window // 2
    idx = np.arange(n)
    lo = np.maximum(idx - half, 0)
    hi = np.minimum(idx + half, n - 1)
    csum = np.concatenate([[0.0], np.cumsum(y)])
    return (csum[hi + 1] - csum[lo]) / (hi - lo + 1)


def fit_window(window: int, length: int) -> int:
    """Largest odd window not exceeding ``window`` or ``length``."""
    w = min(window, length)
    return max(w if w % 2 else w - 1, 1)


def estimate_noise(series, window: int = NOISE_WINDOW) -> NoiseEstimate:
    y = np.asarray(series, dtype=float)
    if y.size < 2:
        raise ValueError("need at least 2 samples to estimate noise")
    delta = sliding_window_filter(y, window) - y
    return NoiseEstimate(float(delta.mean()), float(delta.std(ddof=1)), window)


def default_threshold(noise: NoiseEstimate) -> float:
    return (noise.mean + 3.0 * noise.std) ** 2


def _line(y, start, end):
    """Least-squares line over ``y[start:end+1]`` -> (slope, intercept, residuals)."""
    seg = y[start:end + 1]
    n = seg.size
    xm = 0.5 * (start + end)
    ym = float(seg.sum()) / n
    dx = np.arange(start, end + 1, dtype=float) - xm
    dy = seg - ym
    sxx = n * (n * n - 1) / 12.0
    slope = float(dx @ dy) / sxx if n > 1 else 0.0
    return slope, ym - slope * xm, dy - slope * dx


def segment_error(y, start, end) -> float:
    """Largest squared residual of the least-squares line on ``y[start:end+1]``."""
    resid = _line(y, start, end)[2]
    return float(np.max(resid * resid))


def _resplit(y, start, mid_start, mid_end, end):
    """Best single boundary for ``[start, end]`` placed within the short middle segment.

    Returns ``(cost, total_sse, p)`` where the pieces are ``[start, p]`` and
    ``[p + 1, end]`` and ``cost`` is the larger worst squared residual.
    """
    best = None
    for p in range(max(mid_start - 1, start + 1), min(mid_end, end - 2) + 1):
        left = _line(y, start, p)[2]
        right = _line(y, p + 1, end)[2]
        cost = max(float(np.max(left * left)), float(np.max(right * right)))
        total = float(left @ left + right @ right)
        if best is None or (cost, total) < best[:2]:
            best = (cost, total, p)
    return best


def _refresh(old, k, width, n_segments, span, cost):
    """Candidate costs after segments from ``k`` were rewritten into ``width`` new ones.

    Candidate ``j`` covers segments ``j .. j + span``; one segment was removed.
    """
    lo = max(k - span, 0)
    hi = min(k + width - 1, n_segments - 1 - span)
    fresh = np.array([cost(j) for j in range(lo, hi + 1)], dtype=float)
    return np.concatenate([old[:lo], fresh, old[k + width + 1:]])


def segment_series(series, e_max: float, source_model: int | None = None) -> PiecewiseRate:
    """Bottom-up piecewise-linear segmentation under a squared-residual bound.

    A segment is admissible when every squared residual of its least-squares
    line is at most ``e_max`` (so its mean squared residual is too). Starts
    from segments of two points (the last may hold three) and repeatedly
    applies the cheapest operation that removes one segment: merging two
    neighbours, or dissolving a short segment (at most 3 points) into its
    two neighbours by moving their shared boundary. An operation costs the
    worst squared residual it creates. The order of operations does not
    depend on ``e_max``, which only decides where to stop, so a larger
    ``e_max`` never yields more segments.
    """
    y = np.asarray(series, dtype=float)
    n = y.size
    if n < 2:
        raise ValueError("need at least 2 samples to segment")
    if e_max < 0:
        raise ValueError("e_max must be non-negative")
    # round-off allowance so exactly collinear data passes a zero threshold
    limit = e_max + 1e-12 * max(1.0, float(np.max(np.abs(y)))) ** 2
    bounds = [[k, k + 1] for k in range(0, n - 1, 2)]
    bounds[-1][1] = n - 1

    def merge_cost(k):
        return segment_error(y, bounds[k][0], bounds[k + 1][1])

    split_points = {}

    def split_cost(k):
        mid = bounds[k + 1]
        best = None
        if mid[1] - mid[0] + 1 <= 3:
            best = _resplit(y, bounds[k][0], mid[0], mid[1], bounds[k + 2][1])
        if best is None:
            return np.inf
        split_points[tuple(bounds[k]), tuple(mid)] = best[2]
        return best[0]

    merges = np.array([merge_cost(k) for k in range(len(bounds) - 1)], dtype=float)
    splits = np.array([split_cost(k) for k in range(len(bounds) - 2)], dtype=float)
    while merges.size:
        k = int(np.argmin(merges))
        cost, kind = merges[k], 0
        if splits.size:
            k_s = int(np.argmin(splits))
            if splits[k_s] < cost:
                cost, kind, k = splits[k_s], 1, k_s
        if cost > limit:
            break
        if kind == 0:
            bounds[k:k + 2] = [[bounds[k][0], bounds[k + 1][1]]]
        else:
            p = split_points[tuple(bounds[k]), tuple(bounds[k + 1])]
            bounds[k:k + 3] = [[bounds[k][0], p], [p + 1, bounds[k + 2][1]]]
        # only candidates touching the rewritten segments need new costs
        width = 1 + kind
        merges = _refresh(merges, k, width, len(bounds), 1, merge_cost)
        splits = _refresh(splits, k, width, len(bounds), 2, split_cost)

    segments = []
    for s, e in bounds:
        slope, intercept, _ = _line(y, s, e)
        segments.append(Segment(s, e, slope, intercept))
    return PiecewiseRate(segments, source_model)


def fit_rate(rate_samples, window: int = NOISE_WINDOW, source_model: int | None = None,
             e_max: float | None = None) -> PiecewiseRate:
    """Segment a component's rate samples with the noise-derived threshold."""
    y = np.asarray(rate_samples, dtype=float)
    if y.size == 1:
        return PiecewiseRate([Segment(0, 0, 0.0, float(y[0]))], source_model)
    if e_max is None:
        e_max = default_threshold(estimate_noise(y, fit_window(window, y.size)))
    return segment_series(y, e_max, source_model)


def cluster_scale(members, memberships) -> float:
    """Squared mean membership: the factor mapping a component rate to a cluster rate."""
    members = np.asarray(list(members), dtype=int)
    if members.size == 0:
        return 0.0
    return float(np.asarray(memberships)[members].mean()) ** 2


def cluster_rate(cluster, gm, rate: PiecewiseRate, t: int) -> float:
    """Average edge-generating rate of a node pair in ``cluster`` at step ``t``."""
    return cluster_scale(cluster.members, gm.memberships) * rate(t)


def cluster_rate_series(cluster, gm, rate: PiecewiseRate) -> np.ndarray:
    return cluster_scale(cluster.members, gm.memberships) * rate.values()


def network_threshold(tensor: DynTensor, window: int = DEFAULT_WINDOW) -> np.ndarray:
    series = empirical_rate_series(tensor)
    return sliding_window_filter(series, fit_window(window, series.size))


def model_threshold(models, rates) -> np.ndarray:
    """Network-average rate implied by the fitted models (diagnostic)."""
    total = None
    for gm, rate in zip(models, rates):
        n = gm.memberships.size
        term = (gm.memberships.sum() / n) ** 2 * rate.values()
        total = term if total is None else total + term
    return total


def detect_lifetime(cluster, gm, rate: PiecewiseRate, threshold_series) -> LifetimeSet:
    """Steps where the cluster's average rate strictly exceeds the threshold."""
    threshold = np.asarray(threshold_series, dtype=float)
    if threshold.size != rate.horizon:
        raise ValueError(f"threshold has {threshold.size} steps, rate has {rate.horizon}")
    series = cluster_rate_series(cluster, gm, rate)
    return LifetimeSet(cluster.model_index, tuple(cluster.members),
                       np.flatnonzero(series > threshold))


def expand_steps(steps, w: int, horizon: int) -> np.ndarray:
    """Map coarse steps at granularity ``w`` back onto the fine time axis."""
    steps = np.asarray(steps, dtype=int)
    if w == 1 or steps.size == 0:
        return steps
    fine = (steps[:, None] * w + np.arange(w)[None, :]).ravel()
    return fine[fine < horizon]


# -- serialization ----------------------------------------------------------

def lifetime_to_dict(lt: LifetimeSet, rate: PiecewiseRate | None = None) -> dict:
    return {
        "model_index": lt.model_index,
        "members": list(lt.members),
        "segments": [] if rate is None else [
            {"start": s.start, "end": s.end, "slope": s.slope, "intercept": s.intercept}
            for s in rate.segments],
        "active_intervals": lt.intervals,
    }


def lifetime_from_dict(d: dict) -> tuple[LifetimeSet, PiecewiseRate]:
    steps = [t for s, e in d["active_intervals"] for t in range(s, e + 1)]
    rate = PiecewiseRate([Segment(s["start"], s["end"], s["slope"], s["intercept"])
                          for s in d.get("segments", [])], d["model_index"])
    return LifetimeSet(d["model_index"], tuple(d["members"]), steps), rate


def save_lifetimes(items, path) -> None:
    """``items`` is a list of ``(LifetimeSet, PiecewiseRate | None)``."""
    Path(path).write_text(json.dumps([lifetime_to_dict(lt, rate) for lt, rate in items]),
                          encoding="utf-8")


def load_lifetimes(path):
    return [lifetime_from_dict(d) for d in json.loads(Path(path).read_text(encoding="utf-8"))]


def write_rates_csv(path, models, rates, threshold) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh)
        out.writerow(["t", "model_index", "rate_sample", "fitted_rate", "network_threshold"])
        for gm, rate in zip(models, rates):
            fitted = rate.values()
            for t in range(gm.rate_samples.size):
                out.writerow([t, gm.index, repr(float(gm.rate_samples[t])),
                              repr(float(fitted[t])), repr(float(threshold[t]))])
