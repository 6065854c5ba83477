"""Dynamic networks with planted overlapping clusters and known lifetimes."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .tensor import DynTensor, from_arrays

RATE_MIN, RATE_MAX = 0.0015, 1.0


@dataclass(frozen=True)
class RateSegment:
    start: int
    end: int  # inclusive
    kind: str  # "constant" or "linear"
    params: tuple

    def values(self) -> np.ndarray:
        n = self.end - self.start + 1
        if self.kind == "constant":
            return np.full(n, float(self.params[0]))
        v0, v1 = self.params
        return np.linspace(v0, v1, n)


@dataclass
class GroundTruthCluster:
    members: tuple
    segments: list
    period: int | None = None
    duty_cycle: float = 0.5
    phase: int = 0
    horizon: int = 0
    true_lifetime: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.members = tuple(sorted(int(m) for m in self.members))
        if self.true_lifetime is None:
            self.true_lifetime = np.flatnonzero(self.rate_series() > 0)

    def rate_series(self) -> np.ndarray:
        rate = np.zeros(self.horizon)
        for seg in self.segments:
            rate[seg.start:seg.end + 1] = seg.values()
        if self.period:
            on = ((np.arange(self.horizon) - self.phase) % self.period) < self.duty_cycle * self.period
            rate[~on] = 0.0
        return rate

    def rate_at(self, t: int) -> float:
        return float(self.rate_series()[t])

    def __len__(self):
        return len(self.members)


@dataclass(frozen=True)
class SynthSpec:
    node_count: int = 100
    horizon: int = 1000
    cluster_count: int | None = 10  # None: uniform on cluster_count_range
    cluster_count_range: tuple = (10, 40)
    cluster_size_range: tuple = (8, 20)
    overlap_allowed: bool = True
    overlap_fraction: float = 0.25
    overlap_share: float = 0.5
    periodic_fraction: float = 0.2
    period_range: tuple | None = None  # default (20, horizon // 2)
    duty_cycle: float = 0.5
    background_noise_max: float = 0.01
    noise_rate: float | None = None  # fixed background rate instead of sampling it
    density_range: tuple | None = None  # target average cluster density
    min_lifetime_fraction: float = 0.3
    lifetime_segments: tuple = (3, 8)
    rate_range: tuple = (RATE_MIN, RATE_MAX)
    self_loops: bool = False
    seed: int = 0

    def validate(self) -> None:
        lo, hi = self.cluster_size_range
        problems = []
        if self.node_count < 2 or self.horizon < 1:
            problems.append("node_count must be >= 2 and horizon >= 1")
        if not 1 <= lo <= hi <= self.node_count:
            problems.append(f"cluster sizes {self.cluster_size_range} invalid for {self.node_count} nodes")
        k_lo, k_hi = self.cluster_count_range
        if self.cluster_count is None and not 0 <= k_lo <= k_hi:
            problems.append(f"bad cluster_count_range {self.cluster_count_range}")
        if self.cluster_count is not None and self.cluster_count < 0:
            problems.append("cluster_count must be >= 0")
        r_lo, r_hi = self.rate_range
        if not 0 < r_lo <= r_hi:
            problems.append(f"bad rate_range {self.rate_range}")
        if self.density_range is not None:
            d_lo, d_hi = self.density_range
            if not 0 <= d_lo <= d_hi or d_hi > 2 * r_hi:
                problems.append(f"bad density_range {self.density_range}")
        if not 0 < self.min_lifetime_fraction <= 1:
            problems.append("min_lifetime_fraction must be in (0, 1]")
        if not 0 <= self.periodic_fraction <= 1 or not 0 <= self.overlap_fraction <= 1:
            problems.append("fractions must lie in [0, 1]")
        if not 0 < self.duty_cycle <= 1:
            problems.append("duty_cycle must be in (0, 1]")
        p_lo, p_hi = self.periods()
        if self.periodic_fraction > 0 and not 2 <= p_lo <= p_hi:
            problems.append(f"bad period range {(p_lo, p_hi)}")
        noise = self.noise_rate if self.noise_rate is not None else self.background_noise_max
        if noise < 0:
            problems.append("noise rate must be non-negative")
        if problems:
            raise ValueError("; ".join(problems))

    def periods(self) -> tuple:
        return tuple(self.period_range) if self.period_range else (20, max(self.horizon // 2, 20))


PRESETS = {
    "small": dict(node_count=100, horizon=1000, cluster_count=10),
    "paper": dict(node_count=None, horizon=None, cluster_count=None, cluster_size_range=(8, 80)),
}


def preset_spec(name: str, seed: int = 0, **overrides) -> SynthSpec:
    """``small`` is the desk-scale default; ``paper`` samples sizes from the published ranges."""
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    params = dict(PRESETS[name])
    rng = np.random.default_rng(seed)
    if params["node_count"] is None:
        params["node_count"] = int(rng.integers(100, 501))
        params["horizon"] = int(rng.integers(1000, 4001))
    params.update(overrides)
    return SynthSpec(seed=seed, **params)


def _lifetime_program(rng, spec: SynthSpec, periodic: bool):
    t_total = spec.horizon
    if periodic:
        return [(0, t_total - 1)]
    n_lo, n_hi = spec.lifetime_segments
    n_seg = int(rng.integers(n_lo, n_hi + 1))
    n_seg = max(1, min(n_seg, t_total))
    cuts = np.sort(rng.choice(np.arange(1, t_total), n_seg - 1, replace=False)) if n_seg > 1 else []
    edges = [0, *map(int, cuts), t_total]
    pieces = [(edges[k], edges[k + 1] - 1) for k in range(n_seg)]
    need = int(np.ceil(spec.min_lifetime_fraction * t_total))
    chosen, covered = [], 0
    for k in rng.permutation(n_seg):
        if covered >= need and rng.random() < 0.5:
            continue
        chosen.append(pieces[k])
        covered += pieces[k][1] - pieces[k][0] + 1
    return sorted(chosen)


def _rate_segments(rng, pieces, lo, hi):
    out = []
    for start, end in pieces:
        if rng.random() < 0.5:
            out.append(RateSegment(start, end, "constant", (float(rng.uniform(lo, hi)),)))
        else:
            out.append(RateSegment(start, end, "linear",
                                   (float(rng.uniform(lo, hi)), float(rng.uniform(lo, hi)))))
    return out


def _scale_to_density(cluster: GroundTruthCluster, target: float, lo: float, hi: float):
    """Rescale the rate program so the average in-lifetime density hits ``target``."""
    for _ in range(20):
        current = average_density(cluster)
        if current <= 0 or abs(current - target) < 1e-9:
            break
        f = target / current
        cluster.segments = [replace(s, params=tuple(float(np.clip(p * f, lo, hi)) for p in s.params))
                            for s in cluster.segments]
    return cluster


def _members(rng, spec, size, existing, used):
    n = spec.node_count
    if spec.overlap_allowed and existing and rng.random() < spec.overlap_fraction:
        pool = np.array(sorted(set().union(*existing)))
        share = int(rng.integers(1, max(1, int(spec.overlap_share * size)) + 1))
        share = min(share, pool.size)
        taken = set(rng.choice(pool, share, replace=False).tolist())
    else:
        taken = set()
    fresh = np.array([v for v in range(n) if v not in used and v not in taken])
    want = size - len(taken)
    pick = rng.choice(fresh, min(want, fresh.size), replace=False).tolist() if fresh.size else []
    taken.update(pick)
    if len(taken) < size:
        if not spec.overlap_allowed:
            raise ValueError("not enough free nodes for disjoint clusters; allow overlap or shrink sizes")
        rest = np.array([v for v in range(n) if v not in taken])
        taken.update(rng.choice(rest, size - len(taken), replace=False).tolist())
    return tuple(sorted(taken))


def planted_clusters(spec: SynthSpec, rng: np.random.Generator) -> list[GroundTruthCluster]:
    k = spec.cluster_count
    if k is None:
        k = int(rng.integers(spec.cluster_count_range[0], spec.cluster_count_range[1] + 1))
    lo, hi = spec.rate_range
    p_lo, p_hi = spec.periods()
    clusters, existing, used = [], [], set()
    for _ in range(k):
        size = int(rng.integers(spec.cluster_size_range[0], spec.cluster_size_range[1] + 1))
        members = _members(rng, spec, size, existing, used)
        existing.append(set(members))
        used.update(members)
        periodic = rng.random() < spec.periodic_fraction
        period = int(rng.integers(p_lo, p_hi + 1)) if periodic else None
        phase = int(rng.integers(0, period)) if periodic else 0
        segments = _rate_segments(rng, _lifetime_program(rng, spec, periodic), lo, hi)
        gt = GroundTruthCluster(members, segments, period, spec.duty_cycle, phase, spec.horizon)
        if spec.density_range is not None:
            gt = _scale_to_density(gt, float(rng.uniform(*spec.density_range)), lo, hi)
        gt.true_lifetime = np.flatnonzero(gt.rate_series() > 0)
        clusters.append(gt)
    return clusters


def sample_edges(spec: SynthSpec, clusters, noise_rate: float, rng: np.random.Generator) -> DynTensor:
    """Poisson edge counts per member pair per step, plus uniform background noise."""
    n, h = spec.node_count, spec.horizon
    parts_i, parts_j, parts_t, parts_c = [], [], [], []
    for gt in clusters:
        rate = gt.rate_series()
        steps = np.flatnonzero(rate > 0)
        m = np.asarray(gt.members)
        a, b = np.triu_indices(m.size, 0 if spec.self_loops else 1)
        if steps.size == 0 or a.size == 0:
            continue
        counts = rng.poisson(rate[steps][None, :], size=(a.size, steps.size))
        pi, pt = np.nonzero(counts)
        parts_i.append(m[a[pi]])
        parts_j.append(m[b[pi]])
        parts_t.append(steps[pt])
        parts_c.append(counts[pi, pt])
    if noise_rate > 0:
        a, b = np.triu_indices(n, 0 if spec.self_loops else 1)
        for t0 in range(0, h, 256):
            span = min(256, h - t0)
            counts = rng.poisson(noise_rate, size=(a.size, span))
            pi, pt = np.nonzero(counts)
            parts_i.append(a[pi])
            parts_j.append(b[pi])
            parts_t.append(t0 + pt)
            parts_c.append(counts[pi, pt])
    cat = (lambda xs: np.concatenate(xs) if xs else np.zeros(0, dtype=np.int64))
    return from_arrays(n, h, cat(parts_i), cat(parts_j), cat(parts_t), cat(parts_c),
                       spec.self_loops)


def generate(spec: SynthSpec) -> tuple[DynTensor, list[GroundTruthCluster]]:
    """Sample one network and its planted clusters; fully determined by ``spec.seed``.

    The background rate actually used is stored in ``tensor.metadata["noise_rate"]``.
    """
    spec.validate()
    root = np.random.SeedSequence(spec.seed)
    plant_rng, noise_rng, edge_rng = (np.random.default_rng(s) for s in root.spawn(3))
    clusters = planted_clusters(spec, plant_rng)
    noise = (spec.noise_rate if spec.noise_rate is not None
             else float(noise_rng.uniform(0.0, spec.background_noise_max)))
    tensor = sample_edges(spec, clusters, noise, edge_rng)
    tensor.metadata["noise_rate"] = noise
    return tensor, clusters


def density_of_cluster(gt: GroundTruthCluster, t: int) -> float:
    """``2 * sum_{i,j in C} a_i a_j rate(t) / |C|^2`` with unit memberships."""
    if not 0 <= t < gt.horizon:
        raise ValueError(f"t={t} outside [0, {gt.horizon})")
    return 2.0 * gt.rate_at(t)


def average_density(gt: GroundTruthCluster) -> float:
    rate = gt.rate_series()
    life = rate > 0
    return float(2.0 * rate[life].mean()) if life.any() else 0.0


def network_density(clusters) -> float:
    """Mean of the clusters' average densities."""
    return float(np.mean([average_density(c) for c in clusters])) if clusters else 0.0


def density_bucket(density: float, width: float = 0.1) -> tuple:
    i = min(int(np.floor(density / width + 1e-12)), int(round(1 / width)) - 1)
    i = max(i, 0)
    return (round(i * width, 10), round((i + 1) * width, 10))


# -- serialization ----------------------------------------------------------

def truth_to_dict(clusters, noise_rate: float, spec: SynthSpec | None = None) -> dict:
    from .lifetime import runs
    return {
        "clusters": [{
            "members": list(c.members),
            "segments": [{"start": s.start, "end": s.end, "kind": s.kind, "params": list(s.params)}
                         for s in c.segments],
            "period": c.period,
            "duty_cycle": c.duty_cycle,
            "phase": c.phase,
            "horizon": c.horizon,
            "true_lifetime_intervals": runs(c.true_lifetime),
        } for c in clusters],
        "noise_rate": noise_rate,
        "seed": None if spec is None else spec.seed,
        "spec": None if spec is None else asdict(spec),
    }


def truth_from_dict(data: dict) -> list[GroundTruthCluster]:
    out = []
    for c in data["clusters"]:
        segs = [RateSegment(s["start"], s["end"], s["kind"], tuple(s["params"])) for s in c["segments"]]
        out.append(GroundTruthCluster(c["members"], segs, c.get("period"), c.get("duty_cycle", 0.5),
                                      c.get("phase", 0), c["horizon"]))
    return out


def save_truth(clusters, noise_rate, path, spec=None) -> None:
    Path(path).write_text(json.dumps(truth_to_dict(clusters, noise_rate, spec)), encoding="utf-8")


def load_truth(path) -> list[GroundTruthCluster]:
    return truth_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def spec_from_dict(data: dict) -> SynthSpec:
    fields = SynthSpec.__dataclass_fields__
    clean = {k: (tuple(v) if isinstance(v, list) else v) for k, v in data.items() if k in fields}
    return SynthSpec(**clean)
