"""Comparison methods: thresholded CP components (BC) and evolutionary spectral clustering (EC)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .clustering import ClusterRecord, kmeans
from .cp import CpModel, normalize_components
from .tensor import DynTensor


@dataclass
class BcConfig:
    threshold: float = 0.5

    def __post_init__(self):
        if not 0 < self.threshold < 1:
            raise ValueError(f"threshold must be in (0, 1), got {self.threshold}")


@dataclass
class EcConfig:
    beta: float = 0.5
    k: int | None = None  # None: pick per snapshot by Silhouette
    seed: int = 0
    n_init: int = 3
    k_max: int = 10

    def __post_init__(self):
        if not 0 <= self.beta <= 1:
            raise ValueError(f"beta must be in [0, 1], got {self.beta}")


def bc_ranked_list(model: CpModel, threshold: float = 0.5) -> list[ClusterRecord]:
    """Split every component at ``threshold`` and rank by component norm.

    The list holds the above-threshold sets of all components (largest norm
    first) followed by their complements in the same order. Complements and
    empty sets are flagged as filtered; ``so_score`` carries the norm.
    """
    BcConfig(threshold)
    norms = model.component_norms()
    order = sorted(range(model.rank), key=lambda r: (-norms[r], r))
    models = normalize_components(model)
    everyone = np.arange(model.node_count)
    inside, outside = [], []
    for r in order:
        sel = models[r].memberships > threshold
        for members, bucket, is_complement in ((everyone[sel], inside, False),
                                              (everyone[~sel], outside, True)):
            m = models[r].memberships[members]
            bucket.append(ClusterRecord(r, members.tolist(), float(norms[r]),
                                        float(m.mean()) if m.size else 0.0,
                                        filtered=is_complement or members.size == 0))
    ranked = inside + outside
    for pos, c in enumerate(ranked):
        c.rank_position = pos + 1
    return ranked


def _spectral_labels(sim: np.ndarray, k: int, rng: np.random.Generator, n_init: int):
    """Normalized spectral embedding into ``k`` coordinates followed by K-means."""
    deg = sim.sum(1)
    inv = np.where(deg > 0, 1.0 / np.sqrt(np.where(deg > 0, deg, 1.0)), 0.0)
    lap = inv[:, None] * sim * inv[None, :]
    _, vecs = np.linalg.eigh(lap)
    emb = vecs[:, -k:]
    norms = np.linalg.norm(emb, axis=1, keepdims=True)
    emb = np.where(norms > 0, emb / np.where(norms > 0, norms, 1.0), 0.0)
    # fix the eigenvector signs so the embedding is reproducible
    signs = np.sign(emb[np.abs(emb).argmax(0), np.arange(k)])
    emb = emb * np.where(signs == 0, 1.0, signs)
    return kmeans(emb, k, rng, n_init=n_init)[0], emb


def _auto_labels(sim, k_max, rng, n_init):
    best = None
    for k in range(2, min(k_max, sim.shape[0] - 1) + 1):
        labels, emb = _spectral_labels(sim, k, rng, n_init)
        if np.unique(labels).size < 2:
            continue
        score = _embedding_silhouette(labels, emb)
        if best is None or score > best[0] + 1e-12:
            best = (score, labels)
    return best[1] if best else np.zeros(sim.shape[0], dtype=int)


def _embedding_silhouette(labels, emb):
    dist = np.sqrt(((emb[:, None, :] - emb[None, :, :]) ** 2).sum(-1))
    ids = np.unique(labels)
    onehot = labels[:, None] == ids[None, :]
    sizes = onehot.sum(0)
    sums = dist @ onehot
    own = np.searchsorted(ids, labels)
    own_size = sizes[own]
    a = np.where(own_size > 1, sums[np.arange(labels.size), own] / np.maximum(own_size - 1, 1), 0.0)
    other = sums / sizes
    other[np.arange(labels.size), own] = np.inf
    b = other.min(1)
    denom = np.maximum(a, b)
    s = np.where((own_size > 1) & (denom > 0), (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
    return float(s.mean())


def ec_clustering(tensor: DynTensor, cfg: EcConfig | None = None) -> np.ndarray:
    """Per-snapshot cluster labels, shape ``(T, |V|)``.

    Snapshot ``t`` is clustered on ``(1 - beta) X_t + beta X_{t-1}`` (just
    ``X_0`` at the first step). Each step draws its own seed from
    ``cfg.seed``, so ``beta = 0`` reproduces independent per-snapshot runs.
    """
    cfg = cfg or EcConfig()
    n, h = tensor.node_count, tensor.horizon
    if cfg.k is not None and not 1 <= cfg.k <= n:
        raise ValueError(f"k must be in [1, {n}], got {cfg.k}")
    dense = tensor.to_dense() if n * n * h <= 30_000_000 else None
    seeds = np.random.SeedSequence(cfg.seed).spawn(h)
    labels = np.zeros((h, n), dtype=int)
    prev = None
    for t in range(h):
        cur = dense[:, :, t] if dense is not None else tensor.frontal_slice(t)
        sim = cur if prev is None else (1.0 - cfg.beta) * cur + cfg.beta * prev
        rng = np.random.default_rng(seeds[t])
        if cfg.k is None:
            labels[t] = _auto_labels(sim, cfg.k_max, rng, cfg.n_init)
        else:
            labels[t] = _spectral_labels(sim, cfg.k, rng, cfg.n_init)[0]
        prev = cur
    return labels


def _jaccard(a: frozenset, b: frozenset) -> float:
    return len(a & b) / len(a | b) if a or b else 1.0


def ec_to_clusters(assignments, min_jaccard: float | None = None):
    """Unify recurring node sets across snapshots.

    Returns ``(records, lifetimes)`` ranked by how many snapshots a set
    appears in, then by size. Sets match exactly unless ``min_jaccard`` is
    given, in which case a cell joins the first earlier set it overlaps at
    least that much.
    """
    assignments = np.asarray(assignments)
    found: dict[frozenset, set] = {}
    for t, row in enumerate(assignments):
        for c in np.unique(row):
            key = frozenset(np.flatnonzero(row == c).tolist())
            if min_jaccard is not None and key not in found:
                key = next((k for k in found if _jaccard(k, key) >= min_jaccard), key)
            found.setdefault(key, set()).add(t)
    ordered = sorted(found.items(), key=lambda kv: (-len(kv[1]), -len(kv[0]), min(kv[0])))
    records, lifetimes = [], []
    for pos, (members, steps) in enumerate(ordered):
        records.append(ClusterRecord(-1, sorted(members), float(len(steps)), 1.0,
                                     rank_position=pos + 1))
        lifetimes.append(np.array(sorted(steps), dtype=int))
    return records, lifetimes


def ec_pair_rate(members, tensor: DynTensor, steps, dense: np.ndarray | None = None) -> np.ndarray:
    """Average count per ordered member pair at each step in ``steps``, 0 elsewhere.

    ``dense`` may carry ``tensor.to_dense()`` to avoid rescanning the entries
    when many clusters are measured.
    """
    members = np.asarray(list(members), dtype=int)
    steps = np.asarray(steps, dtype=int)
    out = np.zeros(tensor.horizon)
    if members.size == 0 or steps.size == 0:
        return out
    if dense is not None:
        block = dense[np.ix_(members, members, steps)]
        out[steps] = block.sum((0, 1))
        return out / members.size ** 2
    inside = np.zeros(tensor.node_count, dtype=bool)
    inside[members] = True
    sel = inside[tensor.i] & inside[tensor.j]
    mult = np.where(tensor.i[sel] == tensor.j[sel], 1.0, 2.0)
    np.add.at(out, tensor.t[sel], mult * tensor.counts[sel])
    keep = np.zeros(tensor.horizon, dtype=bool)
    keep[steps] = True
    out[~keep] = 0.0
    return out / members.size ** 2
