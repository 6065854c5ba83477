"""Command line entry point: ``temponet <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import clustering, cp, evaluation, lifetime, pipeline, synth
from .tensor import aggregate_granularity, load_tensor, save_tensor, write_edge_csv


def _config(args) -> dict:
    if getattr(args, "config", None):
        return json.loads(Path(args.config).read_text(encoding="utf-8"))
    return {}


def _out(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _granular(args):
    tensor = load_tensor(args.input)
    return aggregate_granularity(tensor, args.granularity), tensor


def cmd_synth(args) -> int:
    data = _config(args)
    spec = synth.preset_spec(args.preset, seed=args.seed, **{k: tuple(v) if isinstance(v, list) else v
                                                               for k, v in data.items()})
    tensor, planted = synth.generate(spec)
    out = _out(args)
    save_tensor(tensor, out / "tensor.json")
    write_edge_csv(tensor, out / "edges.csv")
    synth.save_truth(planted, tensor.metadata["noise_rate"], out / "truth.json", spec)
    print(f"{len(planted)} planted clusters, {tensor.nnz} entries -> {out}")
    return 0


def cmd_decompose(args) -> int:
    tensor, _ = _granular(args)
    model = pipeline.decompose(tensor, args.rank, args.seed, max_iters=args.max_iters,
                               tol=args.tol, mask_diagonal=args.mask_diagonal,
                               n_starts=args.n_starts)
    pipeline.dump_json(cp.model_to_dict(model), _out(args) / "models.json")
    print(f"rank {model.rank}: fit error {model.fit_error:.6g} after {model.iterations} sweeps")
    return 0


def cmd_cluster(args) -> int:
    model = cp.load_model(args.models)
    clusters = pipeline.find_clusters(cp.normalize_components(model), args.seed, args.k_max,
                                      args.drop_factor, args.criterion)
    pipeline.dump_json(clustering.clusters_to_list(clusters, "TC"), _out(args) / "clusters.json")
    kept = sum(not c.filtered for c in clusters)
    print(f"{len(clusters)} clusters, {kept} retained")
    return 0


def cmd_lifetimes(args) -> int:
    tensor, _ = _granular(args)
    models = cp.normalize_components(cp.load_model(args.models))
    clusters = clustering.load_clusters(args.clusters)
    rates = pipeline.fit_rates(models, args.noise_window)
    found, threshold = pipeline.find_lifetimes(tensor, models, clusters, rates, args.window)
    retained = [c for c in clusters if not c.filtered]
    out = _out(args)
    pipeline.dump_json([dict(lifetime.lifetime_to_dict(lt, rates[c.model_index]), method="TC")
                        for c, lt in zip(retained, found)], out / "lifetimes.json")
    lifetime.write_rates_csv(out / "rates.csv", models, rates, threshold)
    return 0


def detections_from_files(models_path, clusters_path, lifetimes_path, w: int, horizon: int):
    """Rebuild evaluation inputs from the stage outputs of one run."""
    models = cp.normalize_components(cp.load_model(models_path))
    retained = [c for c in clustering.load_clusters(clusters_path) if not c.filtered]
    items = lifetime.load_lifetimes(lifetimes_path)
    dets = []
    for c, (lt, rate) in zip(retained, items):
        gm = models[c.model_index]
        raw = not rate.segments
        values = gm.rate_samples if raw else rate.values()
        dets.append(evaluation.Detection(c.members, c.model_index, values, gm.memberships,
                                         lifetime.expand_steps(lt.active_steps, w, horizon), raw))
    return dets


def cmd_evaluate(args) -> int:
    planted = synth.load_truth(args.truth)
    horizon = planted[0].horizon if planted else 0
    dets = detections_from_files(args.models, args.clusters, args.lifetimes, args.granularity,
                                 horizon)
    report, _ = evaluation.evaluate(dets, pipeline.truths_at(planted, args.granularity))
    out = _out(args)
    evaluation.save_report(report, out / "metrics.json", out / "pr_curve.csv")
    print(f"member F1 {report.member_f1:.4f}, cluster F1 {report.cluster_f1:.4f}")
    return 0


def _apply_flags(data: dict, args, names) -> dict:
    for name in names:
        value = getattr(args, name, None)
        if value is not None:
            data[name] = value
    return data


def cmd_pipeline(args) -> int:
    data = _config(args)
    if args.input:
        data["input"] = args.input
    elif args.preset and "input" not in data:
        data["input"] = {"preset": args.preset}
    cfg = pipeline._from_dict(pipeline.PipelineConfig,
                              _apply_flags(data, args, ["seed", "out_dir", "rank", "granularity"]))
    bundle = pipeline.run_pipeline(cfg)
    kept = sum(not c.filtered for c in bundle["result"].clusters)
    print(f"{kept} retained clusters -> {cfg.out_dir}")
    return 0


def cmd_experiment(args) -> int:
    data = _apply_flags(_config(args), args, ["seed", "out_dir", "preset"])
    if args.rank is not None:
        data["ranks"], data["rank_fractions"] = [args.rank], None
    if args.granularity is not None:
        data["granularities"] = [args.granularity]
    cfg = pipeline._from_dict(pipeline.ExperimentConfig, data)
    report = pipeline.run_experiment(cfg)
    for row in report["summary"]:
        print(f"{row['method']:>2} w={row['w']:<4} R={row['rank_fraction'] or row['rank']} "
              f"member F1 {row['member_f1']:.3f} cluster F1 {row['cluster_f1']:.3f}")
    if report["failure_count"]:
        print(f"{report['failure_count']} network(s) failed", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="temponet", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=fn)
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out-dir", default=".")
        return p

    p = add("synth", cmd_synth, "generate a synthetic network with planted clusters")
    p.add_argument("--preset", default="small", choices=sorted(synth.PRESETS))

    p = add("decompose", cmd_decompose, "fit the CP model")
    p.add_argument("input", help="edge CSV or tensor JSON")
    p.add_argument("--rank", type=int, required=True)
    p.add_argument("--granularity", type=int, default=1)
    p.add_argument("--max-iters", type=int, default=cp.DEFAULT_MAX_ITERS)
    p.add_argument("--tol", type=float, default=cp.DEFAULT_TOL)
    p.add_argument("--mask-diagonal", action="store_true")
    p.add_argument("--n-starts", type=int, default=1)

    p = add("cluster", cmd_cluster, "cluster and rank component memberships")
    p.add_argument("models", help="models.json")
    p.add_argument("--k-max", type=int)
    p.add_argument("--drop-factor", type=float, default=clustering.DEFAULT_DROP_FACTOR)
    p.add_argument("--criterion", default="distance", choices=sorted(clustering.SILHOUETTES))

    p = add("lifetimes", cmd_lifetimes, "segment rates and detect cluster lifetimes")
    p.add_argument("input", help="edge CSV or tensor JSON")
    p.add_argument("models")
    p.add_argument("clusters")
    p.add_argument("--granularity", type=int, default=1)
    p.add_argument("--window", type=int, default=lifetime.DEFAULT_WINDOW,
                   help="smoothing window of the network-average rate")
    p.add_argument("--noise-window", type=int, default=lifetime.NOISE_WINDOW,
                   help="smoothing window used to estimate rate noise")

    p = add("evaluate", cmd_evaluate, "score detections against planted clusters")
    p.add_argument("--truth", required=True)
    p.add_argument("--models", required=True)
    p.add_argument("--clusters", required=True)
    p.add_argument("--lifetimes", required=True)
    p.add_argument("--granularity", type=int, default=1)

    p = add("pipeline", cmd_pipeline, "run the whole detection pipeline on one network")
    p.add_argument("--input", help="edge CSV or tensor JSON")
    p.add_argument("--preset", choices=sorted(synth.PRESETS))
    p.add_argument("--rank", type=int)
    p.add_argument("--granularity", type=int)

    p = add("experiment", cmd_experiment, "run the synthetic benchmark")
    p.add_argument("--preset", choices=sorted(synth.PRESETS))
    p.add_argument("--rank", type=int)
    p.add_argument("--granularity", type=int)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.seed is None and args.command in ("synth", "decompose", "cluster"):
        args.seed = 0
    if args.out_dir == "." and args.command in ("pipeline", "experiment"):
        args.out_dir = None
    try:
        return args.func(args)
    except pipeline.PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
