"""Command-line interface: dist, mean, cluster, classify, simulate.

Every command is a pure function of its inputs, flags and seed; each output
file gets a sibling ``<name>.manifest.json`` recording the tool version,
full parameter set, input digests and seed, enough to re-run the command
bit-identically.  Exit codes: 0 success, 1 validation error, 2
non-convergence (partial results are still written).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .alignment import align_curves
from .analysis import (
    DistanceMatrix,
    average_linkage,
    distance_matrix,
    fit_threshold,
    loo_cv,
)
from .curves import read_curves_csv, srv_back_transform, write_curves_csv
from .errors import RankDeficientError, ValidationError
from .mean import elastic_mean_closed, elastic_mean_open
from .simulate import SimulationConfig, sample_curves

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NO_CONVERGENCE = 2

SEED_ENV_VAR = "ELASTIC_CURVES_SEED"


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(output: Path, command: str, params: dict,
                    inputs: list, seed=None) -> None:
    manifest = {
        "tool": "elastic-curves",
        "version": __version__,
        "command": command,
        "parameters": {k: v for k, v in sorted(params.items())},
        "inputs": {str(p): _sha256(Path(p)) for p in inputs},
        "seed": seed,
    }
    path = Path(str(output) + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=2) + "\n")


def _json_dump(data: dict, out: Path | None) -> None:
    text = json.dumps(data, indent=2) + "\n"
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _cli_params(args: argparse.Namespace) -> dict:
    skip = {"func", "verbose"}
    out = {}
    for key, value in vars(args).items():
        if key in skip:
            continue
        out[key] = str(value) if isinstance(value, Path) else value
    return out


def _resolve_seed(flag_seed, config_seed=None):
    # config overrides flags overrides the environment fallback
    if config_seed is not None:
        return int(config_seed)
    if flag_seed is not None:
        return int(flag_seed)
    env = os.environ.get(SEED_ENV_VAR)
    return int(env) if env is not None else None


# ---------------------------------------------------------------------------
# dist
# ---------------------------------------------------------------------------

def _cmd_dist(args) -> int:
    curves = {}
    for path in args.inputs:
        curves.update(read_curves_csv(path, closed=args.closed))
    if len(curves) < 2:
        raise ValidationError("need at least two curves across the input files")
    if len(curves) == 2:
        (_, c1), (_, c2) = curves.items()
        result = align_curves(c1, c2, eps=args.eps, max_sweeps=args.max_sweeps,
                              restarts=args.restarts)
        _json_dump(result.to_json_dict(), args.out)
        if args.out is not None:
            _write_manifest(args.out, "dist", _cli_params(args), args.inputs)
        return EXIT_OK if result.converged else EXIT_NO_CONVERGENCE
    matrix = distance_matrix(curves, closed=args.closed, restarts=args.restarts,
                             eps=args.eps, max_sweeps=args.max_sweeps,
                             jobs=args.jobs)
    if args.out is None:
        writer = csv.writer(sys.stdout)
        writer.writerow(matrix.labels)
        for row in matrix.values:
            writer.writerow([repr(float(v)) for v in row])
    else:
        matrix.to_csv(args.out)
        _write_manifest(args.out, "dist", _cli_params(args), args.inputs)
    return EXIT_OK


# ---------------------------------------------------------------------------
# mean
# ---------------------------------------------------------------------------

def _cmd_mean(args) -> int:
    curves = read_curves_csv(args.input, closed=args.closed)
    try:
        if args.closed:
            result = elastic_mean_closed(
                list(curves.values()), degree=args.degree, knots=args.knots,
                eps=args.eps, max_iters=args.max_iter, scheme=args.weights,
                lambda_step=args.lambda_step, ridge=args.ridge,
                fit_method=args.fit_method, jobs=args.jobs)
        else:
            result = elastic_mean_open(
                list(curves.values()), degree=args.degree, knots=args.knots,
                eps=args.eps, max_iters=args.max_iter, scheme=args.weights,
                ridge=args.ridge, fit_method=args.fit_method, jobs=args.jobs)
    except RankDeficientError as exc:
        raise ValidationError(
            f"{exc} (hint: lower --knots or pass --ridge 1e-8)") from exc

    json_path = Path(f"{args.out}.json")
    poly_path = Path(f"{args.out}.polyline.csv")
    _json_dump(result.to_json_dict(), json_path)
    grid = np.linspace(0.0, 1.0, args.points)
    polyline = srv_back_transform(result.mean, np.zeros(result.mean.dim), grid)
    write_curves_csv(poly_path, [("mean", polyline)])
    for path in (json_path, poly_path):
        _write_manifest(path, "mean", _cli_params(args), [args.input])
    if not result.converged:
        logger.warning("mean did not converge in %d iterations", args.max_iter)
        return EXIT_NO_CONVERGENCE
    return EXIT_OK


# ---------------------------------------------------------------------------
# cluster
# ---------------------------------------------------------------------------

def _cmd_cluster(args) -> int:
    if args.k is None and not args.elbow:
        raise ValidationError("pass --k N or --elbow")
    if args.matrix:
        matrix = DistanceMatrix.from_csv(args.input)
    else:
        curves = read_curves_csv(args.input, closed=args.closed)
        matrix = distance_matrix(curves, closed=args.closed,
                                 restarts=args.restarts, eps=args.eps,
                                 jobs=args.jobs)
    result = average_linkage(matrix, k=args.k)
    out = args.out
    rows = list(zip(matrix.labels, result.labels))
    if out is None:
        writer = csv.writer(sys.stdout)
        writer.writerow(["curve_id", "cluster"])
        for cid, label in rows:
            writer.writerow([cid, int(label)])
    else:
        with Path(out).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["curve_id", "cluster"])
            for cid, label in rows:
                writer.writerow([cid, int(label)])
        _write_manifest(out, "cluster", _cli_params(args), [args.input])
    logger.info("cluster: %d clusters, merge heights %s", result.n_clusters,
                np.array2string(result.merge_heights, precision=4))
    return EXIT_OK


# ---------------------------------------------------------------------------
# classify
# ---------------------------------------------------------------------------

def _read_features_csv(path):
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or len(rows[0]) < 3:
        raise ValidationError(
            "features CSV needs header id,<feature...>,label")
    n_feat = len(rows[0]) - 2
    if n_feat not in (1, 2):
        raise ValidationError("classification takes one or two features")
    ids, feats, labels = [], [], []
    for row_no, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != n_feat + 2:
            raise ValidationError(f"row {row_no}: wrong field count")
        ids.append(row[0])
        try:
            feats.append([float(v) for v in row[1:-1]])
            labels.append(int(row[-1]))
        except ValueError as exc:
            raise ValidationError(f"row {row_no}: {exc}") from None
    return ids, np.array(feats), np.array(labels)


def _cmd_classify(args) -> int:
    _, features, labels = _read_features_csv(args.input)
    clf = fit_threshold(features, labels)
    loo = loo_cv(features, labels) if args.loo else None
    _json_dump(clf.to_json_dict(loo_accuracy=loo), args.out)
    if args.out is not None:
        _write_manifest(args.out, "classify", _cli_params(args), [args.input])
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def _cmd_simulate(args) -> int:
    data = json.loads(Path(args.config).read_text())
    seed = _resolve_seed(args.seed, data.get("seed"))
    if seed is None:
        raise ValidationError(
            f"no seed: set it in the config, via --seed or ${SEED_ENV_VAR}")
    config = SimulationConfig.from_json_dict(data, seed=seed)
    curves = sample_curves(config)
    named = {f"sim_{i:03d}": c for i, c in enumerate(curves)}
    write_curves_csv(args.out, named)
    _write_manifest(args.out, "simulate", _cli_params(args), [args.config],
                    seed=seed)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="elastic-curves",
        description="Elastic distances and spline means for sparse curves.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    dist = sub.add_parser("dist", help="pairwise elastic distances")
    dist.add_argument("inputs", nargs="+", help="curve CSV file(s)")
    dist.add_argument("--closed", action="store_true")
    dist.add_argument("--restarts", type=int, default=0)
    dist.add_argument("--eps", type=float, default=1e-4)
    dist.add_argument("--max-sweeps", type=int, default=50)
    dist.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    dist.add_argument("--out", type=Path, default=None,
                      help="JSON (2 curves) or matrix CSV (more)")
    dist.set_defaults(func=_cmd_dist)

    mean = sub.add_parser("mean", help="elastic spline mean")
    mean.add_argument("input", help="curve CSV file")
    mean.add_argument("--closed", action="store_true")
    mean.add_argument("--degree", type=int, choices=(0, 1), default=1)
    mean.add_argument("--knots", type=int, default=10,
                      help="number of equally spaced inner knots")
    mean.add_argument("--eps", type=float, default=1e-3)
    mean.add_argument("--max-iter", type=int, default=20)
    mean.add_argument("--weights", choices=("uniform", "trapezoid"),
                      default="uniform")
    mean.add_argument("--fit-method", choices=("mvt", "polygon"),
                      default="mvt")
    mean.add_argument("--ridge", type=float, default=0.0)
    mean.add_argument("--lambda-step", type=float, default=1e-3,
                      help="closedness penalty growth per iteration")
    mean.add_argument("--points", type=int, default=200,
                      help="polyline sample count")
    mean.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    mean.add_argument("--seed", type=int, default=None)
    mean.add_argument("--out", default="mean",
                      help="output prefix: <out>.json, <out>.polyline.csv")
    mean.set_defaults(func=_cmd_mean)

    cluster = sub.add_parser("cluster", help="average-linkage clustering")
    cluster.add_argument("input", help="curve CSV or precomputed matrix CSV")
    cluster.add_argument("--matrix", action="store_true",
                         help="input is a precomputed distance matrix")
    cluster.add_argument("--closed", action="store_true")
    cluster.add_argument("--k", type=int, default=None)
    cluster.add_argument("--elbow", action="store_true")
    cluster.add_argument("--restarts", type=int, default=0)
    cluster.add_argument("--eps", type=float, default=1e-4)
    cluster.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    cluster.add_argument("--out", default=None, help="labels CSV path")
    cluster.set_defaults(func=_cmd_cluster)

    classify = sub.add_parser("classify", help="zero-one-loss thresholds")
    classify.add_argument("input", help="features CSV: id,<f1>[,f2],label")
    classify.add_argument("--loo", action="store_true",
                          help="report leave-one-out accuracy")
    classify.add_argument("--out", type=Path, default=None)
    classify.set_defaults(func=_cmd_classify)

    simulate = sub.add_parser("simulate", help="draw curves from a template")
    simulate.add_argument("config", help="simulation config JSON")
    simulate.add_argument("--seed", type=int, default=None,
                          help=f"seed fallback (also ${SEED_ENV_VAR})")
    simulate.add_argument("--out", required=True, help="output curve CSV")
    simulate.set_defaults(func=_cmd_simulate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
