"""Match detected clusters to planted ones and score them."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .tensor import DynTensor


@dataclass
class Detection:
    """A ranked detected cluster with what the distance function needs.

    ``memberships`` covers all nodes (``None`` means 1 for members); ``rate``
    is the component's edge-generating rate on the analysis time axis and
    ``lifetime`` holds active steps on the finest time axis.
    """

    members: tuple
    model_index: int
    rate: np.ndarray
    memberships: np.ndarray | None = None
    lifetime: np.ndarray | None = None
    raw_rate: bool = False

    def __post_init__(self):
        self.members = tuple(sorted(int(m) for m in self.members))

    def weights(self) -> np.ndarray:
        m = np.asarray(self.members, dtype=int)
        if self.memberships is None:
            return np.ones(m.size)
        return np.asarray(self.memberships, dtype=float)[m]


@dataclass
class Truth:
    members: tuple
    rate: np.ndarray  # planted expected count per member pair and step
    lifetime: np.ndarray | None = None


@dataclass
class MatchedPair:
    detected: int
    truth: int | None
    distance: float


@dataclass
class ClusterMapping:
    pairs: list = field(default_factory=list)

    def matched(self):
        return [p for p in self.pairs if p.truth is not None]


@dataclass
class MetricsReport:
    member_precision: float
    member_recall: float
    member_f1: float
    cluster_recall: float
    cluster_precision: float
    cluster_f1: float
    pr_curve: list
    lifetime_f1: list
    retained: int
    truths: int
    notes: list = field(default_factory=list)

    @property
    def mean_lifetime_f1(self) -> float:
        return float(np.mean(self.lifetime_f1)) if self.lifetime_f1 else 0.0


def harmonic(p: float, r: float) -> float:
    return 2.0 * p * r / (p + r) if p + r > 0 else 0.0


def mapping_distance(det: Detection, truth: Truth) -> float:
    """Relative squared error of the detected cluster's expected counts against a truth.

    Sums run over ordered node pairs including ``m == o``. An empty
    detection scores exactly 1 and an exact one exactly 0.
    """
    rho = np.asarray(truth.rate, dtype=float)
    lam = np.asarray(det.rate, dtype=float)
    if lam.size != rho.size:
        raise ValueError(f"rate lengths differ: {lam.size} vs {rho.size}")
    size = len(truth.members)
    denom = size * size * float(rho @ rho)
    if denom <= 0:
        raise ValueError("ground-truth cluster has no expected edges")
    b = det.weights()
    in_truth = np.isin(det.members, truth.members)
    bb = float(b @ b)
    bc = float(b[in_truth].sum())
    num = (bb * bb * float(lam @ lam) - 2.0 * bc * bc * float(lam @ rho)
           + size * size * float(rho @ rho))
    return max(num, 0.0) / denom


def distance_matrix(detections, truths) -> np.ndarray:
    """All pairwise distances at once; equal to :func:`mapping_distance` entrywise."""
    if not detections or not truths:
        return np.ones((len(detections), len(truths)))
    lam = np.array([d.rate for d in detections], dtype=float)
    rho = np.array([t.rate for t in truths], dtype=float)
    sizes = np.array([len(t.members) for t in truths], dtype=float)
    rr = np.einsum("nt,nt->n", rho, rho)
    denom = sizes ** 2 * rr
    if np.any(denom <= 0):
        raise ValueError("ground-truth cluster has no expected edges")
    n_nodes = 1 + max([max(t.members) for t in truths if t.members]
                      + [max(d.members) for d in detections if d.members])
    b = np.zeros((len(detections), n_nodes))
    for k, d in enumerate(detections):
        if d.members:
            b[k, list(d.members)] = d.weights()
    c = np.zeros((len(truths), n_nodes))
    for k, t in enumerate(truths):
        c[k, list(t.members)] = 1.0
    bb = (b * b).sum(1)
    bc = b @ c.T
    num = ((bb ** 2 * np.einsum("dt,dt->d", lam, lam))[:, None]
           - 2.0 * bc ** 2 * (lam @ rho.T) + (sizes ** 2 * rr)[None, :])
    return np.maximum(num, 0.0) / denom[None, :]


def map_clusters(detections, truths, distances: np.ndarray | None = None) -> ClusterMapping:
    """Greedy matching in rank order.

    Each detection takes its closest truth. A truth already taken by a
    detection from a different generative model counts as distance 1 and
    the next one is tried; detections left with no distance below 1 map to
    nothing.
    """
    if distances is None:
        distances = distance_matrix(detections, truths)
    claimed: dict[int, set] = {}
    mapping = ClusterMapping()
    for k, det in enumerate(detections):
        row = distances[k] if len(truths) else np.zeros(0)
        choice, best = None, 1.0
        for n in np.argsort(row, kind="stable"):
            e = float(row[n])
            owners = claimed.get(int(n))
            if owners and owners != {det.model_index}:
                continue
            if e < 1.0:
                choice, best = int(n), e
            break
        if choice is not None:
            claimed.setdefault(choice, set()).add(det.model_index)
            mapping.pairs.append(MatchedPair(k, choice, best))
        else:
            finite = row[np.isfinite(row)] if row.size else row
            mapping.pairs.append(MatchedPair(k, None, float(min(finite.min(), 1.0)) if finite.size else 1.0))
    return mapping


def member_prf(mapping: ClusterMapping, detections, truths):
    """Per-pair ``(P, R, F1)`` for matched pairs plus the pooled triple."""
    per_pair, inter_sum, det_sum, truth_sum = [], 0, 0, 0
    for pair in mapping.matched():
        d = set(detections[pair.detected].members)
        t = set(truths[pair.truth].members)
        inter = len(d & t)
        p = inter / len(d) if d else 0.0
        r = inter / len(t)
        per_pair.append((p, r, harmonic(p, r)))
        inter_sum += inter
        det_sum += len(d)
        truth_sum += len(t)
    p = inter_sum / det_sum if det_sum else 0.0
    r = inter_sum / truth_sum if truth_sum else 0.0
    return per_pair, (p, r, harmonic(p, r))


def cluster_prf(mapping: ClusterMapping, n_truths: int, n_retained: int):
    """``(recall P/N, precision P/M, f1, flag)``; flag notes an undefined precision."""
    if n_truths < 1:
        raise ValueError("need at least one ground-truth cluster")
    found = len({p.truth for p in mapping.matched()})
    recall = found / n_truths
    if n_retained == 0:
        return recall, 0.0, harmonic(recall, 0.0), "precision undefined: no retained clusters"
    precision = found / n_retained
    return recall, precision, harmonic(recall, precision), ""


def pr_curve(mapping: ClusterMapping, detections, truths) -> list[tuple[float, float]]:
    """Cumulative member precision and recall down the ranked list."""
    total_truth = sum(len(t.members) for t in truths)
    out, inter, size = [], 0, 0
    for pair in mapping.pairs:
        d = detections[pair.detected].members
        size += len(d)
        if pair.truth is not None:
            inter += len(set(d) & set(truths[pair.truth].members))
        out.append((inter / size if size else 0.0, inter / total_truth if total_truth else 0.0))
    return out


def lifetime_f1(detected, truth) -> float:
    """Per-step F1 with detected steps as positives."""
    d = set(np.asarray(detected, dtype=int).tolist())
    t = set(np.asarray(truth, dtype=int).tolist())
    if not t:
        return 1.0 if not d else 0.0
    tp = len(d & t)
    if tp == 0:
        return 0.0
    return harmonic(tp / len(d), tp / len(t))


def cluster_norm(members, tensor: DynTensor, time_column) -> float:
    """Frobenius norm of the data restricted to the cluster's node pairs and active steps.

    Both orientations of an off-diagonal entry are counted.
    """
    members = np.asarray(list(members), dtype=int)
    active = np.flatnonzero(np.asarray(time_column) > 0)
    sel = (np.isin(tensor.i, members) & np.isin(tensor.j, members) & np.isin(tensor.t, active))
    mult = np.where(tensor.i[sel] == tensor.j[sel], 1.0, 2.0)
    return float(np.sqrt(np.sum(mult * tensor.counts[sel] ** 2)))


def evaluate(detections, truths, retained: int | None = None) -> tuple[MetricsReport, ClusterMapping]:
    """Score a ranked detection list; the first ``retained`` entries count as reported.

    Member precision and recall are the end point of the PR curve over the
    reported clusters, so spurious clusters lower precision.
    """
    if retained is None:
        retained = len(detections)
    kept = list(detections[:retained])
    mapping = map_clusters(kept, truths)
    curve = pr_curve(mapping, kept, truths)
    p, r = curve[-1] if curve else (0.0, 0.0)
    c_rec, c_prec, c_f1, flag = cluster_prf(mapping, len(truths), retained)
    lifetimes = []
    for pair in mapping.matched():
        det, tr = kept[pair.detected], truths[pair.truth]
        if det.lifetime is not None and tr.lifetime is not None:
            lifetimes.append(lifetime_f1(det.lifetime, tr.lifetime))
    notes = [flag] if flag else []
    if any(d.raw_rate for d in kept):
        notes.append("unsegmented rate samples used in the distance")
    report = MetricsReport(p, r, harmonic(p, r), c_rec, c_prec, c_f1, curve, lifetimes,
                           retained, len(truths), notes)
    return report, mapping


def report_to_dict(report: MetricsReport) -> dict:
    d = asdict(report)
    d["pr_curve"] = [list(x) for x in report.pr_curve]
    d["mean_lifetime_f1"] = report.mean_lifetime_f1
    return d


def save_report(report: MetricsReport, path, pr_csv=None) -> None:
    Path(path).write_text(json.dumps(report_to_dict(report), indent=2), encoding="utf-8")
    if pr_csv is not None:
        write_pr_csv(report.pr_curve, pr_csv)


def write_pr_csv(curve, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh)
        out.writerow(["k", "precision", "recall"])
        for k, (p, r) in enumerate(curve, start=1):
            out.writerow([k, repr(float(p)), repr(float(r))])
