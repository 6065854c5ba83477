"""End-to-end detection pipeline and the synthetic benchmark runner."""

from __future__ import annotations

import csv
import json
import logging
import os
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import baselines, clustering, cp, evaluation, lifetime, synth
from .tensor import DynTensor, aggregate_granularity, load_tensor, save_tensor

log = logging.getLogger(__name__)

METHODS = ("TC", "BC", "EC")


class PipelineError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


def derive_seed(root: int, *names) -> int:
    """Seed for a named stage, independent of which other stages run."""
    key = [int(root) & 0xFFFFFFFF] + [zlib.crc32(str(n).encode("utf-8")) for n in names]
    return int(np.random.SeedSequence(key).generate_state(1)[0])


def dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True), encoding="utf-8")


# -- configuration ------------------------------------------------------------

@dataclass
class PipelineConfig:
    input: object = None  # edge CSV / tensor JSON path, or {"synth": {...}} / {"preset": name}
    granularity: int = 1
    rank: int = 10
    max_iters: int = cp.DEFAULT_MAX_ITERS
    tol: float = cp.DEFAULT_TOL
    mask_diagonal: bool = False
    n_starts: int = 1
    k_max: int | None = None
    drop_factor: float = clustering.DEFAULT_DROP_FACTOR
    criterion: str = "distance"
    window: int = lifetime.DEFAULT_WINDOW
    noise_window: int = lifetime.NOISE_WINDOW
    baselines: list = field(default_factory=list)
    bc_threshold: float = 0.5
    ec_beta: float = 0.5
    ec_k: int | None = None
    out_dir: str = "out"
    seed: int = 0
    node_count: int | None = None
    horizon: int | None = None
    self_loops_allowed: bool = True

    def validate(self) -> None:
        if self.input is None:
            raise ValueError("config needs an input")
        if isinstance(self.input, str) and not Path(self.input).exists():
            raise ValueError(f"input file not found: {self.input}")
        if int(self.granularity) < 1:
            raise ValueError("granularity must be >= 1")
        if int(self.rank) < 1:
            raise ValueError("rank must be >= 1")
        for name in ("window", "noise_window"):
            value = int(getattr(self, name))
            if value < 1 or value % 2 == 0:
                raise ValueError(f"{name} must be a positive odd integer, got {value}")
        if self.criterion not in clustering.SILHOUETTES:
            raise ValueError(f"unknown criterion {self.criterion!r}")
        unknown = set(self.baselines) - {"BC", "EC"}
        if unknown:
            raise ValueError(f"unknown baselines: {sorted(unknown)}")
        baselines.BcConfig(self.bc_threshold)
        baselines.EcConfig(self.ec_beta)


def _from_dict(cls, data: dict):
    fields = cls.__dataclass_fields__
    unknown = set(data) - set(fields)
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**data)


def load_config(path, cls=PipelineConfig):
    return _from_dict(cls, json.loads(Path(path).read_text(encoding="utf-8")))


# -- TC stages ----------------------------------------------------------------

@dataclass
class TcResult:
    model: cp.CpModel
    models: list
    clusters: list
    rates: list
    threshold: np.ndarray
    lifetimes: list  # LifetimeSet per retained cluster, coarse steps


def decompose(tensor: DynTensor, rank: int, seed: int = 0, **opts) -> cp.CpModel:
    return cp.cp_als(tensor, min(rank, tensor.node_count, tensor.horizon),
                     seed=derive_seed(seed, "decompose"), **opts)


def find_clusters(models, seed: int = 0, k_max=None, drop_factor=clustering.DEFAULT_DROP_FACTOR,
                  criterion="distance"):
    return clustering.detect_clusters(models, k_max, drop_factor, derive_seed(seed, "cluster"),
                                      criterion)


def fit_rates(models, window: int = lifetime.NOISE_WINDOW):
    return [lifetime.fit_rate(gm.rate_samples, window, gm.index) for gm in models]


def find_lifetimes(tensor, models, clusters, rates, window: int = lifetime.DEFAULT_WINDOW):
    threshold = lifetime.network_threshold(tensor, window)
    by_index = {gm.index: gm for gm in models}
    out = [lifetime.detect_lifetime(c, by_index[c.model_index], rates[c.model_index], threshold)
           for c in clusters if not c.filtered]
    return out, threshold


def run_tc(tensor: DynTensor, rank: int, seed: int = 0, model: cp.CpModel | None = None,
           max_iters=cp.DEFAULT_MAX_ITERS, tol=cp.DEFAULT_TOL, mask_diagonal=False, n_starts=1,
           k_max=None, drop_factor=clustering.DEFAULT_DROP_FACTOR, criterion="distance",
           window=lifetime.DEFAULT_WINDOW, noise_window=lifetime.NOISE_WINDOW) -> TcResult:
    """Decompose, normalize, cluster, rank, segment and find lifetimes."""
    stage = "decompose"
    try:
        if model is None:
            model = decompose(tensor, rank, seed, max_iters=max_iters, tol=tol,
                              mask_diagonal=mask_diagonal, n_starts=n_starts)
        stage = "normalize"
        models = cp.normalize_components(model)
        stage = "cluster"
        clusters = find_clusters(models, seed, k_max, drop_factor, criterion)
        stage = "segment"
        rates = fit_rates(models, noise_window)
        stage = "lifetime"
        lifetimes, threshold = find_lifetimes(tensor, models, clusters, rates, window)
    except Exception as exc:
        raise PipelineError(stage, exc) from exc
    return TcResult(model, models, clusters, rates, threshold, lifetimes)


# -- detections for evaluation ----------------------------------------------

def tc_detections(result: TcResult, w: int, horizon: int):
    """Retained TC clusters in rank order as evaluation inputs."""
    dets = []
    for c, lt in zip([c for c in result.clusters if not c.filtered], result.lifetimes):
        gm = result.models[c.model_index]
        dets.append(evaluation.Detection(c.members, c.model_index, result.rates[c.model_index].values(),
                                         gm.memberships, lifetime.expand_steps(lt.active_steps, w, horizon)))
    return dets


def bc_detections(result: TcResult, tensor: DynTensor, w: int, horizon: int, threshold=0.5):
    """Non-empty above-threshold BC sets; rates and lifetimes come from the same component."""
    net = lifetime.network_threshold(tensor)
    dets = []
    for c in baselines.bc_ranked_list(result.model, threshold):
        if c.filtered:
            continue
        gm = result.models[c.model_index]
        rate = result.rates[c.model_index]
        lt = lifetime.detect_lifetime(c, gm, rate, net)
        dets.append(evaluation.Detection(c.members, c.model_index, rate.values(), gm.memberships,
                                         lifetime.expand_steps(lt.active_steps, w, horizon)))
    return dets


def ec_detections(tensor: DynTensor, k: int, w: int, horizon: int, beta=0.5, seed=0):
    labels = baselines.ec_clustering(tensor, baselines.EcConfig(beta, k, derive_seed(seed, "ec")))
    records, lifetimes = baselines.ec_to_clusters(labels)
    n, h = tensor.node_count, tensor.horizon
    dense = tensor.to_dense() if n * n * h <= cp.DENSE_CELL_BUDGET else None
    dets = []
    for pos, (c, steps) in enumerate(zip(records, lifetimes)):
        # EC clusters do not share a generative model, so each gets its own tag
        dets.append(evaluation.Detection(c.members, -1 - pos, baselines.ec_pair_rate(c.members, tensor, steps, dense),
                                         None, lifetime.expand_steps(steps, w, horizon)))
    return dets, records, lifetimes


def truths_at(planted, w: int) -> list:
    """Planted clusters with their expected per-pair counts summed into windows of ``w``."""
    out = []
    for gt in planted:
        rate = gt.rate_series()
        coarse = np.add.reduceat(rate, np.arange(0, rate.size, w)) if w > 1 else rate
        out.append(evaluation.Truth(gt.members, coarse, gt.true_lifetime))
    return out


# -- single network pipeline ------------------------------------------------

def _load_input(cfg: PipelineConfig):
    src = cfg.input
    if isinstance(src, dict):
        if "preset" in src:
            spec = synth.preset_spec(src["preset"], seed=derive_seed(cfg.seed, "synth"))
        else:
            data = dict(src.get("synth", src))
            data.setdefault("seed", derive_seed(cfg.seed, "synth"))
            spec = synth.spec_from_dict(data)
        tensor, planted = synth.generate(spec)
        return tensor, planted, spec
    path = Path(src)
    if path.suffix == ".json":
        return load_tensor(path), None, None
    from .tensor import read_edge_csv
    return read_edge_csv(path, cfg.node_count, cfg.horizon, cfg.self_loops_allowed), None, None


def write_outputs(out_dir, result: TcResult, method="TC") -> None:
    out = Path(out_dir)
    dump_json(cp.model_to_dict(result.model), out / "models.json")
    dump_json(clustering.clusters_to_list(result.clusters, method), out / "clusters.json")
    retained = [c for c in result.clusters if not c.filtered]
    items = [dict(lifetime.lifetime_to_dict(lt, result.rates[c.model_index]), method=method)
             for c, lt in zip(retained, result.lifetimes)]
    dump_json(items, out / "lifetimes.json")
    lifetime.write_rates_csv(out / "rates.csv", result.models, result.rates, result.threshold)


def run_pipeline(cfg: PipelineConfig) -> dict:
    """Run TC on one network and write its report bundle to ``cfg.out_dir``.

    Writes ``models.json``, ``clusters.json``, ``lifetimes.json`` and
    ``rates.csv``, plus ``status.json``. With a synthetic input the planted
    clusters and a metrics report are written too. On failure ``status.json``
    names the failed stage and is marked incomplete.
    """
    cfg.validate()
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    status = {"complete": False, "stage": "ingest"}
    dump_json(status, out / "status.json")
    try:
        try:
            tensor, planted, spec = _load_input(cfg)
        except Exception as exc:
            raise PipelineError("ingest", exc) from exc
        if planted is not None:
            save_tensor(tensor, out / "tensor.json")
            synth.save_truth(planted, tensor.metadata.get("noise_rate", 0.0), out / "truth.json", spec)
        w = int(cfg.granularity)
        try:
            coarse = aggregate_granularity(tensor, w)
        except Exception as exc:
            raise PipelineError("aggregate", exc) from exc
        result = run_tc(coarse, cfg.rank, cfg.seed, max_iters=cfg.max_iters, tol=cfg.tol,
                        mask_diagonal=cfg.mask_diagonal, n_starts=cfg.n_starts, k_max=cfg.k_max,
                        drop_factor=cfg.drop_factor, criterion=cfg.criterion, window=cfg.window,
                        noise_window=cfg.noise_window)
        write_outputs(out, result)
        bundle = {"tensor": coarse, "result": result, "planted": planted}
        if planted is not None:
            truths = truths_at(planted, w)
            methods = {"TC": tc_detections(result, w, tensor.horizon)}
            if "BC" in cfg.baselines:
                methods["BC"] = bc_detections(result, coarse, w, tensor.horizon, cfg.bc_threshold)
            if "EC" in cfg.baselines:
                methods["EC"] = ec_detections(coarse, cfg.ec_k or len(planted), w, tensor.horizon,
                                              cfg.ec_beta, cfg.seed)[0]
            reports = {}
            for name, dets in methods.items():
                report, _ = evaluation.evaluate(dets, truths)
                reports[name] = evaluation.report_to_dict(report)
                evaluation.write_pr_csv(report.pr_curve, out / f"pr_{name}.csv")
            dump_json(reports, out / "metrics.json")
            bundle["metrics"] = reports
    except PipelineError as exc:
        dump_json({"complete": False, "stage": exc.stage, "error": str(exc.cause)}, out / "status.json")
        raise
    dump_json({"complete": True, "stage": "done"}, out / "status.json")
    return bundle


# -- experiments ------------------------------------------------------------

@dataclass
class ExperimentConfig:
    preset: str = "small"
    networks: int = 20
    density_range: list | None = None
    methods: list = field(default_factory=lambda: ["TC", "BC", "EC"])
    granularities: list = field(default_factory=lambda: [1])
    rank_fractions: list | None = field(default_factory=lambda: [1.0])
    ranks: list | None = None  # absolute ranks, used when rank_fractions is None
    ec_granularities: list | None = None  # defaults to ``granularities``
    bc_threshold: float = 0.5
    ec_beta: float = 0.5
    max_iters: int = cp.DEFAULT_MAX_ITERS
    tol: float = cp.DEFAULT_TOL
    mask_diagonal: bool = False
    synth_overrides: dict = field(default_factory=dict)
    out_dir: str = "experiment"
    seed: int = 0
    workers: int = 1

    def validate(self) -> None:
        if not self.methods:
            raise ValueError("method list is empty")
        bad = set(self.methods) - set(METHODS)
        if bad:
            raise ValueError(f"unknown methods: {sorted(bad)}")
        if self.networks < 1:
            raise ValueError("need at least one network")
        if not self.granularities or any(int(w) < 1 for w in self.granularities):
            raise ValueError("granularities must be positive integers")
        if self.rank_fractions is None and not self.ranks:
            raise ValueError("give rank_fractions or ranks")


def _ranks_for(cfg: ExperimentConfig, k: int) -> list[tuple]:
    if cfg.rank_fractions is not None:
        return [(f, max(1, int(round(f * k)))) for f in cfg.rank_fractions]
    return [(None, int(r)) for r in cfg.ranks]


def _network_spec(cfg: ExperimentConfig, index: int) -> synth.SynthSpec:
    overrides = dict(cfg.synth_overrides)
    if cfg.density_range is not None:
        overrides["density_range"] = tuple(cfg.density_range)
    return synth.preset_spec(cfg.preset, seed=derive_seed(cfg.seed, "network", index), **overrides)


def _row(base, method, w, frac, rank, report):
    return dict(base, method=method, w=w, rank_fraction=frac, rank=rank,
                member_precision=report.member_precision, member_recall=report.member_recall,
                member_f1=report.member_f1, cluster_precision=report.cluster_precision,
                cluster_recall=report.cluster_recall, cluster_f1=report.cluster_f1,
                mean_lifetime_f1=report.mean_lifetime_f1, retained=report.retained,
                lifetime_f1=report.lifetime_f1, pr_curve=[list(p) for p in report.pr_curve],
                notes=report.notes)


def run_network(cfg: ExperimentConfig, index: int) -> list[dict]:
    """Every (method, w, R) cell for one synthetic network."""
    spec = _network_spec(cfg, index)
    tensor, planted = synth.generate(spec)
    density = synth.network_density(planted)
    base = {"network": index, "seed": spec.seed, "density": density,
            "bucket": list(synth.density_bucket(density)), "truths": len(planted)}
    rows = []
    ec_ws = cfg.ec_granularities if cfg.ec_granularities is not None else cfg.granularities
    for w in sorted(set(cfg.granularities) | (set(ec_ws) if "EC" in cfg.methods else set())):
        coarse = aggregate_granularity(tensor, w)
        truths = truths_at(planted, w)
        if w in cfg.granularities and {"TC", "BC"} & set(cfg.methods):
            for frac, rank in _ranks_for(cfg, len(planted)):
                result = run_tc(coarse, rank, derive_seed(spec.seed, "tc", w, rank),
                                max_iters=cfg.max_iters, tol=cfg.tol,
                                mask_diagonal=cfg.mask_diagonal)
                if "TC" in cfg.methods:
                    report, _ = evaluation.evaluate(tc_detections(result, w, tensor.horizon), truths)
                    rows.append(_row(base, "TC", w, frac, rank, report))
                if "BC" in cfg.methods:
                    dets = bc_detections(result, coarse, w, tensor.horizon, cfg.bc_threshold)
                    report, _ = evaluation.evaluate(dets, truths)
                    rows.append(_row(base, "BC", w, frac, rank, report))
        if "EC" in cfg.methods and w in ec_ws:
            dets = ec_detections(coarse, len(planted), w, tensor.horizon, cfg.ec_beta,
                                 derive_seed(spec.seed, "ec", w))[0]
            report, _ = evaluation.evaluate(dets, truths)
            rows.append(_row(base, "EC", w, None, len(planted), report))
    return rows


def _safe_network(args):
    cfg, index = args
    try:
        return index, run_network(cfg, index), None
    except Exception as exc:  # one bad network must not sink the batch
        log.exception("network %d failed", index)
        return index, [], f"{type(exc).__name__}: {exc}"


def worker_count(requested: int = 1) -> int:
    env = os.environ.get("TEMPONET_WORKERS")
    n = int(env) if env else int(requested)
    return max(1, n)


def summarize(rows) -> list[dict]:
    """Batch means per (method, w, rank fraction, density bucket)."""
    groups: dict[tuple, list] = {}
    for r in rows:
        key = (r["method"], r["w"], r["rank_fraction"], r["rank"] if r["rank_fraction"] is None else None,
               tuple(r["bucket"]))
        groups.setdefault(key, []).append(r)
    out = []
    for (method, w, frac, rank, bucket), items in sorted(groups.items(), key=lambda kv: str(kv[0])):
        mean = lambda k: float(np.mean([x[k] for x in items]))  # noqa: E731
        out.append({"method": method, "w": w, "rank_fraction": frac, "rank": rank,
                    "bucket": list(bucket), "networks": len(items),
                    "member_f1": mean("member_f1"), "member_precision": mean("member_precision"),
                    "member_recall": mean("member_recall"), "cluster_f1": mean("cluster_f1"),
                    "cluster_precision": mean("cluster_precision"),
                    "cluster_recall": mean("cluster_recall"),
                    "mean_lifetime_f1": mean("mean_lifetime_f1")})
    return out


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> dict:
    """Generate a synthetic batch, run every method and write metrics tables."""
    cfg.validate()
    jobs = [(cfg, k) for k in range(cfg.networks)]
    workers = worker_count(cfg.workers)
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_safe_network, jobs))
    else:
        results = [_safe_network(j) for j in jobs]
    rows, failures = [], []
    for index, items, err in sorted(results, key=lambda x: x[0]):
        rows.extend(items)
        if err:
            failures.append({"network": index, "error": err})
    report = {"config": asdict(cfg), "rows": rows, "summary": summarize(rows),
              "failures": failures, "failure_count": len(failures)}
    if write:
        write_experiment(report, cfg.out_dir)
    return report


def write_experiment(report: dict, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dump_json(report, out / "metrics.json")
    with open(out / "f1_vs_granularity.csv", "w", newline="", encoding="utf-8") as fh:
        cols = ["method", "bucket_low", "bucket_high", "rank_fraction", "rank", "w", "networks",
                "member_f1", "member_precision", "member_recall", "cluster_f1", "mean_lifetime_f1"]
        out_csv = csv.writer(fh)
        out_csv.writerow(cols)
        for s in report["summary"]:
            out_csv.writerow([s["method"], s["bucket"][0], s["bucket"][1], s["rank_fraction"],
                              s["rank"], s["w"], s["networks"]]
                             + [repr(s[k]) for k in cols[7:]])
    with open(out / "pr_curves.csv", "w", newline="", encoding="utf-8") as fh:
        out_csv = csv.writer(fh)
        out_csv.writerow(["network", "method", "w", "rank", "k", "precision", "recall"])
        for r in report["rows"]:
            for k, (p, rec) in enumerate(r["pr_curve"], start=1):
                out_csv.writerow([r["network"], r["method"], r["w"], r["rank"], k, repr(p), repr(rec)])
    with open(out / "lifetime_f1.csv", "w", newline="", encoding="utf-8") as fh:
        out_csv = csv.writer(fh)
        out_csv.writerow(["network", "method", "w", "rank", "pair", "lifetime_f1"])
        for r in report["rows"]:
            for k, f in enumerate(r["lifetime_f1"]):
                out_csv.writerow([r["network"], r["method"], r["w"], r["rank"], k, repr(f)])
