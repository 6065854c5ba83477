"""Sparse node x node x time count tensor for undirected dynamic networks."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np


class EdgeEvent(NamedTuple):
    src: int
    dst: int
    t: int
    weight: float = 1.0


@dataclass(frozen=True, eq=False)
class DynTensor:
    """Symmetric count tensor stored as canonical coordinates ``i <= j``.

    Reads through :meth:`get` or indexing are mirrored, so ``X[i, j, t]`` and
    ``X[j, i, t]`` always agree. Instances are immutable once built.
    """

    node_count: int
    horizon: int
    i: np.ndarray
    j: np.ndarray
    t: np.ndarray
    counts: np.ndarray
    self_loops_allowed: bool = True
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("i", "j", "t", "counts"):
            getattr(self, name).setflags(write=False)

    @property
    def nnz(self) -> int:
        return int(self.counts.size)

    def get(self, i: int, j: int, t: int) -> float:
        a, b = (i, j) if i <= j else (j, i)
        hit = np.flatnonzero((self.i == a) & (self.j == b) & (self.t == t))
        return float(self.counts[hit[0]]) if hit.size else 0.0

    def __getitem__(self, key) -> float:
        return self.get(*key)

    def total_mass(self) -> float:
        """Sum over all ordered entries (off-diagonal entries counted twice)."""
        off = self.i != self.j
        return float(2.0 * self.counts[off].sum() + self.counts[~off].sum())

    def to_dense(self) -> np.ndarray:
        dense = np.zeros((self.node_count, self.node_count, self.horizon))
        dense[self.i, self.j, self.t] = self.counts
        dense[self.j, self.i, self.t] = self.counts
        return dense

    def frontal_slice(self, t: int) -> np.ndarray:
        sel = self.t == t
        out = np.zeros((self.node_count, self.node_count))
        out[self.i[sel], self.j[sel]] = self.counts[sel]
        out[self.j[sel], self.i[sel]] = self.counts[sel]
        return out

    def scaled(self, c: float) -> "DynTensor":
        if c < 0:
            raise ValueError("scale factor must be non-negative")
        return _build(self.node_count, self.horizon, self.i, self.j, self.t,
                      self.counts * c, self.self_loops_allowed, dict(self.metadata))


def _build(node_count, horizon, i, j, t, w, self_loops_allowed, metadata=None) -> DynTensor:
    """Canonicalize, merge duplicates and drop zeros."""
    i = np.asarray(i, dtype=np.int64)
    j = np.asarray(j, dtype=np.int64)
    t = np.asarray(t, dtype=np.int64)
    w = np.asarray(w, dtype=float)
    lo, hi = np.minimum(i, j), np.maximum(i, j)
    if lo.size:
        key = (t * node_count + lo) * node_count + hi
        uniq, inv = np.unique(key, return_inverse=True)
        summed = np.bincount(inv, weights=w, minlength=uniq.size)
        keep = summed != 0
        uniq, summed = uniq[keep], summed[keep]
        hi = uniq % node_count
        lo = (uniq // node_count) % node_count
        t = uniq // (node_count * node_count)
    else:
        summed = np.zeros(0)
        t = np.zeros(0, dtype=np.int64)
    return DynTensor(int(node_count), int(horizon), lo, hi, t, summed,
                     bool(self_loops_allowed), metadata or {})


def from_edge_events(events: Iterable, node_count: int, horizon: int,
                     self_loops_allowed: bool = True) -> DynTensor:
    """Accumulate edge events into a symmetric tensor.

    Each event contributes its weight to both ``(src, dst, t)`` and its
    mirror. Out-of-range indices, negative weights and (when disallowed)
    self-loops are rejected with the offending event in the message.
    """
    if node_count < 1 or horizon < 1:
        raise ValueError("node_count and horizon must be positive")
    src, dst, ts, ws = [], [], [], []
    for ev in events:
        ev = EdgeEvent(*ev)
        if not (0 <= ev.src < node_count and 0 <= ev.dst < node_count):
            raise ValueError(f"node index out of bounds in event {tuple(ev)}")
        if not 0 <= ev.t < horizon:
            raise ValueError(f"time index out of bounds in event {tuple(ev)}")
        if ev.weight < 0 or not math.isfinite(ev.weight):
            raise ValueError(f"invalid weight in event {tuple(ev)}")
        if ev.src == ev.dst and not self_loops_allowed:
            raise ValueError(f"self-loop not allowed: event {tuple(ev)}")
        src.append(ev.src)
        dst.append(ev.dst)
        ts.append(ev.t)
        ws.append(float(ev.weight))
    return _build(node_count, horizon, src, dst, ts, ws, self_loops_allowed)


def from_arrays(node_count, horizon, i, j, t, counts, self_loops_allowed=True) -> DynTensor:
    """Vectorized constructor used by the generator; same checks as :func:`from_edge_events`."""
    i, j, t = (np.asarray(a, dtype=np.int64) for a in (i, j, t))
    counts = np.asarray(counts, dtype=float)
    if i.size:
        if i.min() < 0 or j.min() < 0 or max(i.max(), j.max()) >= node_count:
            raise ValueError("node index out of bounds")
        if t.min() < 0 or t.max() >= horizon:
            raise ValueError("time index out of bounds")
        if (counts < 0).any():
            raise ValueError("negative count")
        if not self_loops_allowed and (i == j).any():
            raise ValueError("self-loop not allowed")
    return _build(node_count, horizon, i, j, t, counts, self_loops_allowed)


def aggregate_granularity(tensor: DynTensor, w: int) -> DynTensor:
    """Sum consecutive snapshots in disjoint windows ``[t'w, (t'+1)w)``.

    A trailing partial window is kept as a shorter last snapshot; its length
    is recorded in ``metadata["last_window"]``.
    """
    if int(w) != w or w < 1:
        raise ValueError(f"granularity must be a positive integer, got {w!r}")
    w = int(w)
    horizon = -(-tensor.horizon // w)
    meta = dict(tensor.metadata)
    meta["granularity"] = meta.get("granularity", 1) * w
    meta["last_window"] = tensor.horizon - (horizon - 1) * w
    return _build(tensor.node_count, horizon, tensor.i, tensor.j, tensor.t // w,
                  tensor.counts, tensor.self_loops_allowed, meta)


def snapshot_density(tensor: DynTensor, t: int) -> float:
    """Fraction of admissible unordered node pairs carrying an edge at ``t``."""
    if not 0 <= t < tensor.horizon:
        raise ValueError(f"time index {t} outside [0, {tensor.horizon})")
    n = tensor.node_count
    pairs = n * (n + 1) // 2 if tensor.self_loops_allowed else n * (n - 1) // 2
    if pairs == 0:
        return 0.0
    present = np.count_nonzero((tensor.t == t) & (tensor.counts > 0))
    return present / pairs


def empirical_rate_series(tensor: DynTensor) -> np.ndarray:
    """Per-step sum over ordered pairs divided by ``|V|^2``."""
    weights = np.where(tensor.i == tensor.j, 1.0, 2.0) * tensor.counts
    sums = np.bincount(tensor.t, weights=weights, minlength=tensor.horizon)
    return sums / tensor.node_count ** 2


# -- file formats ---------------------------------------------------------

def read_edge_csv(path, node_count: int | None = None, horizon: int | None = None,
                  self_loops_allowed: bool = True) -> DynTensor:
    """Read ``src,dst,t[,weight]`` rows; ``#`` lines are comments.

    Missing ``node_count``/``horizon`` are inferred as ``max index + 1``.
    """
    events = []
    with open(path, newline="", encoding="utf-8") as fh:
        rows = csv.reader(line for line in fh if line.strip() and not line.lstrip().startswith("#"))
        header = [h.strip() for h in next(rows, [])]
        if header[:3] != ["src", "dst", "t"]:
            raise ValueError(f"{path}: expected header src,dst,t[,weight], got {header}")
        has_w = len(header) > 3 and header[3] == "weight"
        for lineno, row in enumerate(rows, start=2):
            try:
                w = float(row[3]) if has_w and len(row) > 3 and row[3].strip() else 1.0
                events.append(EdgeEvent(int(row[0]), int(row[1]), int(row[2]), w))
            except (ValueError, IndexError) as exc:
                raise ValueError(f"{path}: bad row {lineno}: {row}") from exc
    if node_count is None:
        node_count = 1 + max((max(e.src, e.dst) for e in events), default=0)
    if horizon is None:
        horizon = 1 + max((e.t for e in events), default=0)
    return from_edge_events(events, node_count, horizon, self_loops_allowed)


def write_edge_csv(tensor: DynTensor, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh)
        out.writerow(["src", "dst", "t", "weight"])
        for a, b, t, c in zip(tensor.i, tensor.j, tensor.t, tensor.counts):
            out.writerow([int(a), int(b), int(t), _num(c)])


def _num(x):
    x = float(x)
    return int(x) if x.is_integer() else x


def tensor_to_dict(tensor: DynTensor) -> dict:
    order = np.lexsort((tensor.t, tensor.j, tensor.i))
    return {
        "node_count": tensor.node_count,
        "horizon": tensor.horizon,
        "self_loops_allowed": tensor.self_loops_allowed,
        "entries": [[int(tensor.i[k]), int(tensor.j[k]), int(tensor.t[k]), _num(tensor.counts[k])]
                    for k in order],
        "metadata": tensor.metadata,
    }


def tensor_from_dict(data: dict) -> DynTensor:
    entries = np.asarray(data["entries"], dtype=float).reshape(-1, 4)
    out = from_arrays(data["node_count"], data["horizon"], entries[:, 0], entries[:, 1],
                      entries[:, 2], entries[:, 3], data.get("self_loops_allowed", True))
    out.metadata.update(data.get("metadata", {}))
    return out


def save_tensor(tensor: DynTensor, path) -> None:
    Path(path).write_text(json.dumps(tensor_to_dict(tensor)), encoding="utf-8")


def load_tensor(path) -> DynTensor:
    """Load a tensor dump (``.json``) or an edge-event file (anything else)."""
    path = Path(path)
    if path.suffix == ".json":
        return tensor_from_dict(json.loads(path.read_text(encoding="utf-8")))
    return read_edge_csv(path)
