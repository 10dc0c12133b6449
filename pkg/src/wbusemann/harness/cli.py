"""Command-line entry point.

Exit codes: 0 success, 2 invalid input, 3 problem too large for the exact
solvers.
"""
import argparse
import csv
import io
import json
import math
import os
import sys

import numpy as np

from .. import __version__
from ..errors import CapacityError, WBusemannError
from ..measures import Discrete1D, GaussianMeasure, load_dataset_csv, load_mixture_json
from .experiments import ExperimentConfig, clusters_cmd, correlate_cmd, repro_block, timed

EXIT_OK, EXIT_INPUT, EXIT_CAPACITY = 0, 2, 3

DATASET_METRICS = ("swb1dg", "swbg", "sotdd", "sw", "otdd-exact")
MIXTURE_METRICS = ("b1dgmsw", "bgmsw", "w_bw-exact")


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if isinstance(x, np.integer):
        return int(x)
    return x


def _flat_rows(report):
    """Best-effort flattening of a report for CSV output."""
    for key in ("correlations", "rows"):
        if isinstance(report.get(key), list):
            return report[key]
    if "k" in report and "distance" in report:
        return [{"k": k, "distance": d} for k, d in zip(report["k"], report["distance"])]
    if "trajectory" in report:
        return report["trajectory"]
    return [{k: v for k, v in report.items() if not isinstance(v, (dict, list))}]


def _emit(report, args):
    report = _jsonable(report)
    if args.format == "csv":
        rows = _flat_rows(report)
        buf = io.StringIO()
        keys = list(dict.fromkeys(k for r in rows for k in r))
        w = csv.DictWriter(buf, fieldnames=keys)
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in keys})
        text = buf.getvalue()
    else:
        text = json.dumps(report, indent=2) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _config_of(args, skip=("func", "out", "format")):
    return {k: v for k, v in vars(args).items() if k not in skip}


# ---------------------------------------------------------------------------
# subcommands


def cmd_dist(args):
    from ..ot import wasserstein_bw_mixtures
    from ..sliced import sliced_distance

    if args.metric in MIXTURE_METRICS:
        P, Q = load_mixture_json(args.p), load_mixture_json(args.q)
    else:
        P, Q = load_dataset_csv(args.p), load_dataset_csv(args.q)
    kw = {}
    if args.metric == "swbg":
        kw["d_reduced"] = args.d_reduced
    if args.metric == "w_bw-exact":
        est, ms = timed(wasserstein_bw_mixtures, P, Q)
        out = {"metric": args.metric, "value": est, "L": 0, "seed": args.seed, "std_error": 0.0}
    else:
        if args.metric != "otdd-exact":
            kw["threads"] = args.threads
        est, ms = timed(sliced_distance, args.metric, P, Q, L=args.projections, seed=args.seed, **kw)
        out = est.to_dict()
    out["wall_time_ms"] = ms
    out["reproducibility"] = repro_block(args.seed, _config_of(args))
    return out


def cmd_correlate(args):
    fields = {}
    if args.config:
        with open(args.config) as fh:
            fields.update(json.load(fh))
    for name in ("pairs", "data_path"):
        v = getattr(args, name)
        if v is not None:
            fields[name] = v
    if args.metrics:
        fields["metrics"] = tuple(args.metrics)
    if args.projections:
        fields["L"] = tuple(args.projections)
    if args.size_range:
        fields["size_range"] = tuple(args.size_range)
    fields["seed"] = args.seed
    fields["threads"] = args.threads
    cfg = ExperimentConfig(**fields)
    report, ms = timed(correlate_cmd, cfg)
    out = report.to_dict()
    out["wall_time_ms"] = ms
    return out


def cmd_flow(args):
    from ..flow import FlowConfig, gaussian_source, rings_target, run_flow, write_snapshot

    if args.target:
        target = load_dataset_csv(args.target)
    else:
        target = rings_target(args.rings_n, seed=args.seed, mode=args.rings_mode)
    source = load_dataset_csv(args.source) if args.source else gaussian_source(target, seed=args.seed)
    cfg = FlowConfig(
        step=args.step, momentum=args.momentum, iterations=args.iterations, projections=args.projections,
        metric=args.metric, seed=args.seed, target_batch=args.target_batch, eval_every=args.eval_every,
        d_reduced=args.d_reduced,
    )
    result, ms = timed(run_flow, source, target, cfg, snapshot_every=args.snapshot_every)
    if args.trajectory:
        result.write_csv(args.trajectory)
    if args.snapshot_dir:
        os.makedirs(args.snapshot_dir, exist_ok=True)
        for it, parts in result.snapshots:
            write_snapshot(parts, os.path.join(args.snapshot_dir, f"iter_{it:06d}"), it)
        write_snapshot(result.state.particles, os.path.join(args.snapshot_dir, "final"), cfg.iterations)
    return {
        "trajectory": result.trajectory,
        "wall_time_ms": ms,
        "reproducibility": repro_block(args.seed, _config_of(args)),
    }


def _load_points(path, has_label):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, :-1] if has_label else data


def cmd_clusters(args):
    try:
        X = _load_points(args.data, args.has_label)
    except ValueError as exc:
        raise WBusemannError(f"cannot parse {args.data}: {exc}") from None
    report, ms = timed(
        clusters_cmd, X, k_max=args.k_max, metric=args.metric, L=args.projections, seed=args.seed,
        rel_threshold=args.threshold, threads=args.threads,
    )
    out = report.to_dict()
    out["wall_time_ms"] = ms
    return out


def _read_json_arg(v):
    if os.path.exists(v):
        with open(v) as fh:
            return json.load(fh)
    return json.loads(v)


def _measure_from_json(obj):
    kind = obj.get("kind", "gaussian" if "cov" in obj else "discrete")
    if kind == "gaussian":
        return GaussianMeasure(obj["mean"], obj["cov"])
    if kind == "discrete":
        return Discrete1D(obj["values"], obj.get("weights"))
    raise WBusemannError(f"unknown measure kind {kind!r}")


def cmd_ray_check(args):
    from .. import rays

    if args.kind == "1d":
        a = Discrete1D(args.mu0, args.w0)
        b = Discrete1D(args.mu1, args.w1)
        ok, interval = rays.is_ray_1d(a, b), rays.extension_interval_1d(a, b)
    elif args.kind == "1d-gaussian":
        ok = rays.is_ray_1d_gaussian(args.sigma0, args.sigma1)
        interval = rays.ray_extension_interval_1d_gaussian(args.sigma0, args.sigma1)
    else:
        c0 = np.asarray(_read_json_arg(args.cov0), dtype=float)
        c1 = np.asarray(_read_json_arg(args.cov1), dtype=float)
        ok, interval = rays.is_ray_bw(c0, c1), rays.ray_extension_interval_bw(c0, c1)
    return {"kind": args.kind, "is_ray": bool(ok), "extension_interval": [interval[0], interval[1]]}


def cmd_busemann(args):
    from ..busemann import busemann, busemann_project
    from ..rays import ray_from_dict

    ray = ray_from_dict(_read_json_arg(args.ray))
    nu = _measure_from_json(_read_json_arg(args.nu))
    val = busemann(ray, nu)
    out = val.to_dict()
    if args.project:
        p = busemann_project(ray, nu)
        out.update({"t": p.t, "on_ray": p.on_ray, "extension_interval": list(p.interval)})
        if isinstance(p.measure, GaussianMeasure):
            out["projection"] = p.measure.to_dict()
        else:
            out["projection"] = {"values": p.measure.values.tolist(), "weights": p.measure.weights.tolist()}
    return out


# ---------------------------------------------------------------------------


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--out", help="write the report here instead of stdout")
    common.add_argument("--format", choices=("json", "csv"), default="json")

    ap = argparse.ArgumentParser(prog="wbusemann", description="Busemann functions and sliced distances on Wasserstein space.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dist", parents=[common], help="distance between two datasets or two mixtures")
    p.add_argument("--metric", choices=DATASET_METRICS + MIXTURE_METRICS, required=True)
    p.add_argument("--projections", "-L", type=int, default=500)
    p.add_argument("--d-reduced", type=int, default=10)
    p.add_argument("p", help="dataset CSV (or mixture JSON for mixture metrics)")
    p.add_argument("q")
    p.set_defaults(func=cmd_dist)

    p = sub.add_parser("correlate", parents=[common], help="correlation of sliced distances with exact OTDD")
    p.add_argument("--config", help="JSON file with experiment fields")
    p.add_argument("--data", dest="data_path", help="base dataset CSV (default: synthetic blobs)")
    p.add_argument("--pairs", type=int)
    p.add_argument("--metrics", nargs="+")
    p.add_argument("--projections", "-L", type=int, nargs="+")
    p.add_argument("--size-range", type=int, nargs=2)
    p.set_defaults(func=cmd_correlate)

    p = sub.add_parser("flow", parents=[common], help="particle flow towards a labeled target")
    p.add_argument("--target", help="target CSV (default: three rings)")
    p.add_argument("--source", help="source CSV (default: standard normal particles)")
    p.add_argument("--rings-n", type=int, default=80)
    p.add_argument("--rings-mode", choices=("even", "uniform"), default="even")
    p.add_argument("--metric", choices=("swbg", "swb1dg", "sotdd", "sw"), default="swbg")
    p.add_argument("--iterations", type=int, default=1000)
    p.add_argument("--step", type=float, default=1.0)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--projections", "-L", type=int, default=64)
    p.add_argument("--d-reduced", type=int, default=10)
    p.add_argument("--target-batch", type=int)
    p.add_argument("--eval-every", type=int, default=100)
    p.add_argument("--trajectory", help="trajectory CSV path")
    p.add_argument("--snapshot-every", type=int, default=0)
    p.add_argument("--snapshot-dir")
    p.set_defaults(func=cmd_flow)

    p = sub.add_parser("clusters", parents=[common], help="detect the number of mixture components")
    p.add_argument("data", help="CSV of points with a header row")
    p.add_argument("--has-label", action="store_true", help="drop the last column")
    p.add_argument("--k-max", type=int, default=8)
    p.add_argument("--metric", choices=MIXTURE_METRICS, default="b1dgmsw")
    p.add_argument("--projections", "-L", type=int, default=500)
    p.add_argument("--threshold", type=float, default=0.1)
    p.set_defaults(func=cmd_clusters)

    p = sub.add_parser("ray-check", parents=[common], help="test whether a geodesic extends to a ray")
    p.add_argument("--kind", choices=("1d", "1d-gaussian", "bw"), required=True)
    p.add_argument("--mu0", type=float, nargs="+")
    p.add_argument("--mu1", type=float, nargs="+")
    p.add_argument("--w0", type=float, nargs="+")
    p.add_argument("--w1", type=float, nargs="+")
    p.add_argument("--sigma0", type=float)
    p.add_argument("--sigma1", type=float)
    p.add_argument("--cov0", help="JSON matrix or path")
    p.add_argument("--cov1", help="JSON matrix or path")
    p.set_defaults(func=cmd_ray_check)

    p = sub.add_parser("busemann", parents=[common], help="Busemann value of a measure along a ray")
    p.add_argument("--ray", required=True, help="ray JSON (inline or path)")
    p.add_argument("--nu", required=True, help="measure JSON (inline or path)")
    p.add_argument("--project", action="store_true", help="also report the projection coordinate")
    p.set_defaults(func=cmd_busemann)
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        report = args.func(args)
        _emit(report, args)
    except CapacityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except (WBusemannError, ValueError, KeyError, TypeError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
