"""Cluster the membership vector of each generative model and rank the clusters."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .cp import GenerativeModel

DEFAULT_DROP_FACTOR = 5.0
N_RESTARTS = 10


@dataclass
class ClusterRecord:
    model_index: int
    members: tuple
    so_score: float
    mean_membership: float = 1.0
    rank_position: int | None = None
    filtered: bool = False
    degenerate: bool = False

    def __post_init__(self):
        self.members = tuple(sorted(int(m) for m in self.members))

    def __len__(self):
        return len(self.members)


def kmeans(points, k: int, rng: np.random.Generator, n_init: int = N_RESTARTS,
           max_iter: int = 300):
    """Lloyd's algorithm with k-means++ seeding; best of ``n_init`` restarts.

    ``points`` is ``(n,)`` or ``(n, d)``. Returns ``(labels, centers, inertia)``.
    Iterations stop once assignments no longer change.
    """
    x = np.asarray(points, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    best = None
    for _ in range(n_init):
        centers = _plusplus(x, k, rng)
        labels = None
        for _ in range(max_iter):
            dist = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(-1)
            new = dist.argmin(1)
            if labels is not None and np.array_equal(new, labels):
                break
            labels = new
            sizes = np.bincount(labels, minlength=k)
            sums = np.zeros_like(centers)
            np.add.at(sums, labels, x)
            filled = sizes > 0
            centers[filled] = sums[filled] / sizes[filled, None]
            for c in np.flatnonzero(~filled):
                # re-seed an empty cell at the worst-served point
                far = dist[np.arange(n), labels].argmax()
                centers[c] = x[far]
                labels[far] = c
        inertia = float(((x - centers[labels]) ** 2).sum())
        if best is None or inertia < best[2] - 1e-12:
            best = (labels.copy(), centers.copy(), inertia)
    return best


def _plusplus(x, k, rng):
    n = x.shape[0]
    centers = [x[rng.integers(n)]]
    d2 = ((x - centers[0]) ** 2).sum(1)
    for _ in range(1, k):
        total = d2.sum()
        idx = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
        centers.append(x[idx])
        d2 = np.minimum(d2, ((x - x[idx]) ** 2).sum(1))
    return np.array(centers, dtype=float)


def node_similarity(gm: GenerativeModel, i: int, j: int) -> float:
    return float(gm.memberships[i] * gm.memberships[j])


def silhouette(labels, gm_or_memberships) -> float:
    """Mean Silhouette score under the product similarity ``a_i * a_j``.

    The average similarity of a node to a cluster includes the node itself.
    A node whose best average similarity is 0 scores 0.
    """
    a = np.asarray(getattr(gm_or_memberships, "memberships", gm_or_memberships), dtype=float)
    labels = np.asarray(labels)
    ids = np.unique(labels)
    if ids.size < 2:
        raise ValueError("silhouette needs at least 2 non-empty clusters")
    means = np.array([a[labels == c].mean() for c in ids])
    own = np.searchsorted(ids, labels)
    d = a[:, None] * means[None, :]
    d_own = d[np.arange(a.size), own]
    other = d.copy()
    other[np.arange(a.size), own] = -np.inf
    best_other = other.max(1)
    denom = d.max(1)
    scores = np.zeros(a.size)
    nz = denom > 0
    scores[nz] = (d_own[nz] - best_other[nz]) / denom[nz]
    return float(scores.mean())


def distance_silhouette(labels, values) -> float:
    """Mean Silhouette score with the dissimilarity ``|a_i - a_j|``.

    Own-cluster distances exclude the node itself; nodes in singleton
    clusters score 0.
    """
    x = np.asarray(getattr(values, "memberships", values), dtype=float)
    labels = np.asarray(labels)
    ids = np.unique(labels)
    if ids.size < 2:
        raise ValueError("silhouette needs at least 2 non-empty clusters")
    dist = np.abs(x[:, None] - x[None, :])
    onehot = labels[:, None] == ids[None, :]
    sizes = onehot.sum(0)
    sums = dist @ onehot
    own = np.searchsorted(ids, labels)
    own_size = sizes[own]
    a = np.where(own_size > 1, sums[np.arange(x.size), own] / np.maximum(own_size - 1, 1), 0.0)
    mean_other = sums / sizes
    mean_other[np.arange(x.size), own] = np.inf
    b = mean_other.min(1)
    denom = np.maximum(a, b)
    s = np.where((own_size > 1) & (denom > 0), (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
    return float(s.mean())


SILHOUETTES = {"distance": distance_silhouette, "product": silhouette}


def so_score(members, gm: GenerativeModel) -> float:
    """Mean pairwise membership product times the summed rate samples."""
    members = np.asarray(list(members), dtype=int)
    if members.size == 0:
        raise ValueError("cluster must be non-empty")
    mean = gm.memberships[members].mean()
    return float(mean * mean * gm.rate_samples.sum())


def _record(gm, members, degenerate=False):
    members = np.asarray(members, dtype=int)
    return ClusterRecord(gm.index, members.tolist(), so_score(members, gm),
                         float(gm.memberships[members].mean()), degenerate=degenerate)


def select_k(values, k_max: int, rng: np.random.Generator, criterion: str = "distance"):
    """Return ``(k, labels, score)`` maximizing mean Silhouette over K=2..k_max.

    ``values`` must contain at least two distinct entries. Ties keep the
    smaller K.
    """
    score_fn = SILHOUETTES[criterion]
    distinct = np.unique(values).size
    best = None
    for k in range(2, min(k_max, distinct) + 1):
        labels, _, _ = kmeans(values, k, rng)
        score = score_fn(labels, values)
        if best is None or score > best[2] + 1e-12:
            best = (k, labels, score)
    return best


def cluster_component(gm: GenerativeModel, k_max: int | None = None, seed: int = 0,
                      criterion: str = "distance") -> list[ClusterRecord]:
    """Split one generative model's nodes by 1-D K-means on their memberships.

    K is chosen by the Silhouette criterion, scored with membership
    distances by default or with the product similarity (``"product"``). A component with no positive
    membership gives no clusters; one whose values are all equal, or whose
    best Silhouette is negative, gives a single cluster.
    """
    a = np.asarray(gm.memberships, dtype=float)
    n = a.size
    if k_max is None:
        k_max = min(10, n - 1)
    if k_max < 2 and n > 1:
        raise ValueError("k_max must be >= 2")
    if gm.is_zero:
        return []
    if np.unique(a).size == 1:
        return [_record(gm, np.arange(n), degenerate=True)]
    # sorting makes the restarts independent of node labelling
    order = np.argsort(a, kind="stable")
    rng = np.random.default_rng(seed)
    k, labels_sorted, score = select_k(a[order], k_max, rng, criterion)
    if score < 0:
        return [_record(gm, np.arange(n))]
    labels = np.empty(n, dtype=int)
    labels[order] = labels_sorted
    cells = sorted((np.flatnonzero(labels == c) for c in np.unique(labels)),
                   key=lambda m: -a[m].mean())
    return [_record(gm, m) for m in cells]


def rank_and_filter(clusters, drop_factor: float = DEFAULT_DROP_FACTOR) -> list[ClusterRecord]:
    """Sort by SO score and flag everything below the elbow.

    The elbow is the first consecutive drop between positive scores larger
    than ``drop_factor``. Taking the largest drop instead would be fooled by
    the tail: ratios between near-zero background scores can be arbitrarily
    large. Clusters with a zero score are always flagged.
    """
    ranked = sorted(clusters, key=lambda c: (-c.so_score, c.model_index,
                                              c.members[0] if c.members else -1))
    scores = np.array([c.so_score for c in ranked])
    positive = int(np.count_nonzero(scores > 0))
    cut = positive
    if positive >= 2:
        ratios = scores[:positive - 1] / scores[1:positive]
        big = np.flatnonzero(ratios > drop_factor)
        if big.size:
            cut = int(big[0]) + 1
    for pos, c in enumerate(ranked):
        c.rank_position = pos + 1
        c.filtered = pos >= cut
    return ranked


def detect_clusters(models, k_max: int | None = None, drop_factor: float = DEFAULT_DROP_FACTOR,
                    seed: int = 0, criterion: str = "distance") -> list[ClusterRecord]:
    """Cluster every generative model and return the ranked list."""
    seeds = np.random.SeedSequence(seed).spawn(max(len(models), 1))
    found = []
    for gm, ss in zip(models, seeds):
        found.extend(cluster_component(gm, k_max, int(ss.generate_state(1)[0]), criterion))
    return rank_and_filter(found, drop_factor)


def clusters_to_list(clusters, method: str | None = None) -> list[dict]:
    out = []
    for c in clusters:
        d = asdict(c)
        d["members"] = list(c.members)
        if method:
            d["method"] = method
        out.append(d)
    return out


def clusters_from_list(data) -> list[ClusterRecord]:
    fields = ClusterRecord.__dataclass_fields__
    return [ClusterRecord(**{k: v for k, v in d.items() if k in fields}) for d in data]


def save_clusters(clusters, path, method: str | None = None) -> None:
    Path(path).write_text(json.dumps(clusters_to_list(clusters, method)), encoding="utf-8")


def load_clusters(path) -> list[ClusterRecord]:
    return clusters_from_list(json.loads(Path(path).read_text(encoding="utf-8")))
