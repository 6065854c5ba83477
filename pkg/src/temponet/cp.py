"""Non-negative symmetric CP (PARAFAC) decomposition of a dynamic network tensor.

The model is ``X[i, j, t] ~ sum_r scale[r] * A[i, r] * A[j, r] * T[t, r]`` with
every factor non-negative and the two node modes tied together.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse

from .tensor import DynTensor

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITERS = 500
# above this many cells the solver works on the coordinate list instead of a dense array
DENSE_CELL_BUDGET = 30_000_000
_MAX_HALVINGS = 8
_TIME_PASSES = 5


@dataclass
class CpModel:
    rank: int
    scales: np.ndarray
    node_loadings: np.ndarray
    time_loadings: np.ndarray
    fit_error: float = 0.0
    iterations: int = 0
    seed: int | None = None
    options: dict = field(default_factory=dict)
    history: list = field(default_factory=list)
    degenerate: list = field(default_factory=list)

    @property
    def node_count(self) -> int:
        return self.node_loadings.shape[0]

    @property
    def horizon(self) -> int:
        return self.time_loadings.shape[0]

    def component_norms(self) -> np.ndarray:
        """Frobenius norm of each rank-1 term ``scale * A_r o A_r o T_r``."""
        return (self.scales * np.linalg.norm(self.node_loadings, axis=0) ** 2
                * np.linalg.norm(self.time_loadings, axis=0))


@dataclass
class GenerativeModel:
    """One normalized component: memberships with max 1 and per-step rates."""

    index: int
    memberships: np.ndarray
    rate_samples: np.ndarray

    @property
    def is_zero(self) -> bool:
        return not np.any(self.memberships > 0)


@dataclass
class CoreConsistency:
    score: float | None
    note: str = ""
    rank_deficient: bool = False

    @property
    def defined(self) -> bool:
        return self.score is not None


# -- tensor access --------------------------------------------------------

class _DenseOps:
    def __init__(self, tensor: DynTensor, zero_diagonal: bool):
        x = tensor.to_dense()
        if zero_diagonal:
            idx = np.arange(tensor.node_count)
            x[idx, idx, :] = 0.0
        self.n, self.h = tensor.node_count, tensor.horizon
        self.flat = x.reshape(self.n * self.n, self.h)
        self.norm_sq = float(np.einsum("ij,ij->", self.flat, self.flat))

    def node_mttkrp(self, a, tl):
        z = (self.flat @ tl).reshape(self.n, self.n, -1)
        return np.einsum("ijr,jr->ir", z, a)

    def time_mttkrp(self, a):
        kr = (a[:, None, :] * a[None, :, :]).reshape(self.n * self.n, -1)
        return self.flat.T @ kr

    def sse(self, a, tl, diag=None, skip_diag=False, mt=None):
        """Direct residual sum of squares; ``diag`` replaces the diagonal data."""
        kr = (a[:, None, :] * a[None, :, :]).reshape(self.n * self.n, -1)
        resid = self.flat - kr @ tl.T
        rows = np.arange(self.n) * (self.n + 1)
        if skip_diag:
            resid[rows] = 0.0
        elif diag is not None:
            resid[rows] += diag
        return float(np.einsum("ij,ij->", resid, resid))


class _SparseOps:
    def __init__(self, tensor: DynTensor, zero_diagonal: bool):
        keep = tensor.i != tensor.j if zero_diagonal else np.ones(tensor.nnz, bool)
        self.i, self.j = tensor.i[keep], tensor.j[keep]
        self.t, self.c = tensor.t[keep], tensor.counts[keep]
        self.off = self.i != self.j
        self.n, self.h = tensor.node_count, tensor.horizon
        mult = np.where(self.off, 2.0, 1.0)
        self.norm_sq = float(np.sum(mult * self.c ** 2))
        self.mult_c = mult * self.c

    def node_mttkrp(self, a, tl):
        out = np.zeros((self.n, a.shape[1]))
        off = self.off
        for r in range(a.shape[1]):
            v = self.c * tl[self.t, r]
            out[:, r] = (np.bincount(self.i[off], v[off] * a[self.j[off], r], minlength=self.n)
                         + np.bincount(self.j, v * a[self.i, r], minlength=self.n))
        return out

    def time_mttkrp(self, a):
        out = np.zeros((self.h, a.shape[1]))
        for r in range(a.shape[1]):
            out[:, r] = np.bincount(self.t, self.mult_c * a[self.i, r] * a[self.j, r],
                                    minlength=self.h)
        return out

    def sse(self, a, tl, diag=None, skip_diag=False, mt=None):
        """Residual sum of squares from the expanded norm identity."""
        if mt is None:
            mt = self.time_mttkrp(a)
        model_sq = float(np.sum((a.T @ a) ** 2 * (tl.T @ tl)))
        sse = self.norm_sq - 2.0 * float(np.sum(tl * mt)) + model_sq
        model_diag = (a * a) @ tl.T
        if skip_diag:
            sse -= float(np.sum(model_diag ** 2))
        elif diag is not None:
            sse += float(np.sum(diag ** 2)) - 2.0 * float(np.sum(diag * model_diag))
        return max(sse, 0.0)


def _ops_for(tensor: DynTensor, zero_diagonal: bool):
    if tensor.node_count ** 2 * tensor.horizon <= DENSE_CELL_BUDGET:
        return _DenseOps(tensor, zero_diagonal)
    return _SparseOps(tensor, zero_diagonal)


# -- solver ---------------------------------------------------------------

class _Problem:
    """Objective bookkeeping for one fit, optionally with diagonal cells imputed."""

    def __init__(self, ops, masked: bool):
        self.ops = ops
        self.masked = masked
        self.imputed = None  # |V| x T diagonal fill used by the current sweep

    def diag(self, a, tl):
        return (a * a) @ tl.T

    def node_mttkrp(self, a, tl):
        m = self.ops.node_mttkrp(a, tl)
        if self.imputed is not None:
            m += a * (self.imputed @ tl)
        return m

    def time_mttkrp(self, a):
        m = self.ops.time_mttkrp(a)
        if self.imputed is not None:
            m += self.imputed.T @ (a * a)
        return m

    def completed_sse(self, a, tl):
        """Squared error against the data with the diagonal filled by ``imputed``."""
        return self.ops.sse(a, tl, diag=self.imputed)

    def sse(self, a, tl):
        """Squared error of the actual objective (diagonal excluded when masked)."""
        return self.ops.sse(a, tl, skip_diag=self.masked)


def _update_time(problem, a, tl, mt):
    gram = (a.T @ a) ** 2
    tl = tl.copy()
    for _ in range(_TIME_PASSES):
        for r in range(a.shape[1]):
            g = gram[r, r]
            if g <= 0:
                tl[:, r] = 0.0
                continue
            col = tl[:, r] + (mt[:, r] - tl @ gram[:, r]) / g
            tl[:, r] = np.maximum(col, 0.0)
    return tl


def _update_nodes(problem, a, tl):
    """Projected least-squares step for the tied node mode with backtracking.

    Returns the new factor and its time MTTKRP; the step is rejected (factor
    unchanged) if no halving of it lowers the objective.
    """
    m = problem.node_mttkrp(a, tl)
    gram = (a.T @ a) * (tl.T @ tl)
    cand = np.maximum(m @ np.linalg.pinv(gram), 0.0)
    base = problem.completed_sse(a, tl)
    step = 1.0
    for _ in range(_MAX_HALVINGS):
        trial = a + step * (cand - a)
        if problem.completed_sse(trial, tl) <= base:
            return trial, problem.time_mttkrp(trial)
        step *= 0.5
    return a, problem.time_mttkrp(a)


def _rescale(a, tl):
    norms = np.linalg.norm(a, axis=0)
    safe = np.where(norms > 0, norms, 1.0)
    a = a / safe
    tl = tl * safe ** 2
    tl[:, norms == 0] = 0.0
    return a, tl


def _fit_once(problem, n, h, rank, rng, max_iters, tol):
    a = 1.0 - rng.random((n, rank))
    tl = 1.0 - rng.random((h, rank))
    a, tl = _rescale(a, tl)
    history = [np.sqrt(problem.sse(a, tl))]
    it = 0
    for it in range(1, max_iters + 1):
        if problem.masked:
            problem.imputed = problem.diag(a, tl)
        a, mt = _update_nodes(problem, a, tl)
        tl = _update_time(problem, a, tl, mt)
        a, tl = _rescale(a, tl)
        err = np.sqrt(problem.sse(a, tl))
        if not (np.isfinite(err) and np.all(np.isfinite(a)) and np.all(np.isfinite(tl))):
            raise FloatingPointError(f"non-finite values in CP-ALS at iteration {it}")
        history.append(err)
        prev = history[-2]
        if prev == 0.0 or abs(prev - err) / prev < tol:
            break
    problem.imputed = None
    return a, tl, history, it


def cp_als(tensor: DynTensor, rank: int, max_iters: int = DEFAULT_MAX_ITERS,
           tol: float = DEFAULT_TOL, seed: int = 0, mask_diagonal: bool = False,
           n_starts: int = 1) -> CpModel:
    """Fit a rank-``rank`` non-negative symmetric CP model by alternating least squares.

    Each sweep takes a projected least-squares step for the shared node
    factor (halved until the objective does not increase) followed by exact
    coordinate updates of the time factor, so the Frobenius error never
    increases. With ``mask_diagonal`` the ``(i, i, t)`` cells are left out of
    the objective; they are imputed from the current model before each sweep.
    """
    n, h = tensor.node_count, tensor.horizon
    if not 1 <= rank <= min(n, h):
        raise ValueError(f"rank must be in [1, {min(n, h)}], got {rank}")
    if max_iters < 1 or not tol > 0:
        raise ValueError("max_iters must be >= 1 and tol > 0")
    if n_starts < 1:
        raise ValueError("n_starts must be >= 1")
    zero_diag = mask_diagonal or not tensor.self_loops_allowed
    problem = _Problem(_ops_for(tensor, zero_diag), mask_diagonal)
    seeds = np.random.SeedSequence(seed).spawn(n_starts)
    best = None
    for ss in seeds:
        a, tl, history, iters = _fit_once(problem, n, h, rank, np.random.default_rng(ss),
                                          max_iters, tol)
        if best is None or history[-1] < best[2][-1]:
            best = (a, tl, history, iters)
    a, tl, history, iters = best
    scales = np.linalg.norm(tl, axis=0)
    tl = tl / np.where(scales > 0, scales, 1.0)
    degenerate = [r for r in range(rank) if scales[r] == 0 or not np.any(a[:, r] > 0)]
    if degenerate:
        log.info("degenerate components: %s", degenerate)
    return CpModel(rank, scales, a, tl, float(history[-1]), iters, seed,
                   {"max_iters": max_iters, "tol": tol, "mask_diagonal": mask_diagonal,
                    "n_starts": n_starts},
                   [float(v) for v in history], degenerate)


def reconstruct(model: CpModel) -> np.ndarray:
    a, tl = model.node_loadings, model.time_loadings
    x = np.einsum("r,ir,jr,tr->ijt", model.scales, a, a, tl)
    # mirror the upper triangle so (i, j) and (j, i) agree bit for bit
    lower = np.tril_indices(a.shape[0], -1)
    x[lower] = x.transpose(1, 0, 2)[lower]
    return x


def relative_fit(model: CpModel, tensor: DynTensor, mask_diagonal: bool = False) -> float:
    """``||X - Xhat||_F / ||X||_F`` (0 for an all-zero tensor)."""
    if model.node_count != tensor.node_count or model.horizon != tensor.horizon:
        raise ValueError(
            f"model shape ({model.node_count}, {model.horizon}) does not match tensor "
            f"({tensor.node_count}, {tensor.horizon})")
    n, h = tensor.node_count, tensor.horizon
    if n * n * h <= DENSE_CELL_BUDGET:
        x = tensor.to_dense()
        resid = x - reconstruct(model)
        if mask_diagonal:
            idx = np.arange(n)
            resid[idx, idx, :] = 0.0
            x[idx, idx, :] = 0.0
        denom = np.linalg.norm(x)
        return float(np.linalg.norm(resid) / denom) if denom > 0 else 0.0
    problem = _Problem(_SparseOps(tensor, mask_diagonal), mask_diagonal)
    denom = problem.ops.norm_sq
    if denom == 0:
        return 0.0
    tl = model.time_loadings * model.scales
    return float(np.sqrt(problem.sse(model.node_loadings, tl) / denom))


def normalize_components(model: CpModel) -> list[GenerativeModel]:
    """Rescale each component so its largest membership is 1.

    The factor removed from the node loadings enters the rate squared, so
    ``sum_r m_ir m_jr rate_tr`` reproduces the raw model exactly.
    """
    out = []
    for r in range(model.rank):
        col = model.node_loadings[:, r]
        peak = float(col.max()) if col.size else 0.0
        if peak <= 0 or model.scales[r] == 0:
            out.append(GenerativeModel(r, np.zeros_like(col), np.zeros(model.horizon)))
            continue
        out.append(GenerativeModel(
            r, col / peak, model.scales[r] * model.time_loadings[:, r] * peak ** 2))
    return out


def core_consistency(tensor: DynTensor, model: CpModel) -> CoreConsistency:
    """Core consistency of a fitted model (100 for a perfectly trilinear fit).

    The least-squares Tucker core for the fixed loadings is compared with the
    superdiagonal identity core. When a loading matrix is rank deficient (for
    example a component collapsed to zero) the core is not unique; the
    minimum-norm core is used and the result is flagged, so an over-fitted
    rank still gets a comparable, lower score.
    """
    a = model.node_loadings
    tl = model.time_loadings * model.scales
    r = model.rank
    notes = []
    for name, mat in (("node", a), ("time", tl)):
        got = np.linalg.matrix_rank(mat)
        if got < r:
            notes.append(f"{name} loadings have rank {got} < {r}; minimum-norm core used")
    # same cutoff as matrix_rank, so numerically null directions are not inverted
    pa, pt = (np.linalg.pinv(m, rcond=max(m.shape) * np.finfo(float).eps) for m in (a, tl))
    n, h = tensor.node_count, tensor.horizon
    off = tensor.i != tensor.j
    rows = np.concatenate([tensor.i * n + tensor.j, (tensor.j * n + tensor.i)[off]])
    cols = np.concatenate([tensor.t, tensor.t[off]])
    vals = np.concatenate([tensor.counts, tensor.counts[off]])
    flat = sparse.csr_matrix((vals, (rows, cols)), shape=(n * n, h))
    y = np.asarray(flat @ pt.T).reshape(n, n, r)
    core = np.einsum("pi,qj,ijs->pqs", pa, pa, y)
    ideal = np.zeros((r, r, r))
    ideal[np.arange(r), np.arange(r), np.arange(r)] = 1.0
    score = 100.0 * (1.0 - float(np.sum((core - ideal) ** 2)) / r)
    return CoreConsistency(score, "; ".join(notes), bool(notes))


# -- serialization ----------------------------------------------------------

def model_to_dict(model: CpModel) -> dict:
    return {
        "rank": model.rank,
        "scales": model.scales.tolist(),
        "node_loadings": model.node_loadings.tolist(),
        "time_loadings": model.time_loadings.tolist(),
        "fit_error": model.fit_error,
        "iterations": model.iterations,
        "seed": model.seed,
        "options": model.options,
        "degenerate_components": model.degenerate,
    }


def model_from_dict(data: dict) -> CpModel:
    rank = int(data["rank"])
    return CpModel(
        rank,
        np.asarray(data["scales"], dtype=float).reshape(rank),
        np.asarray(data["node_loadings"], dtype=float).reshape(-1, rank),
        np.asarray(data["time_loadings"], dtype=float).reshape(-1, rank),
        float(data.get("fit_error", 0.0)),
        int(data.get("iterations", 0)),
        data.get("seed"),
        dict(data.get("options", {})),
        [],
        list(data.get("degenerate_components", [])),
    )


def save_model(model: CpModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model)), encoding="utf-8")


def load_model(path) -> CpModel:
    return model_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
