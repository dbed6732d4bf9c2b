"""Command-line front end.

Exit codes: 0 success, 2 bad input or flags, 3 infeasible configuration.
Every command writes a ``manifest.json`` into its output directory recording
the argv needed to reproduce it.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import DBSCAN, HDBSCAN, hdbscan, dbscan, default_eps
from .causal import BayesianNetwork, discretize, influence_scores
from .forecast import (
    HybridModel,
    MlpModel,
    TrainConfig,
    build_supervised,
    evaluate_forecast,
    fit_model,
)
from .ingest import DataError, Dataset, SynthConfig, drop_incomplete, generate_synthetic, knn_impute, minmax_normalize, read_dataset, serialize_dataset, write_dataset
from .metrics import TABLE_METHODS, BenchmarkReport, benchmark, render_markdown
from .qaoa import QAOAClustering, qaoa_cluster
from .qubo import CapacityError
from .render import bar_chart_svg, cluster_map_svg, clusters_geojson, line_chart_svg
from .similarity import combined_distance

logger = logging.getLogger("qepi")

EXIT_INPUT = 2
EXIT_INFEASIBLE = 3


class InputError(Exception):
    pass


# --------------------------------------------------------------------------
# helpers


def _threads(args) -> int:
    if args.threads:
        return args.threads
    env = os.environ.get("QEPI_THREADS")
    if env:
        try:
            return max(int(env), 1)
        except ValueError:
            raise InputError(f"QEPI_THREADS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def _years(text: str) -> tuple[int, int]:
    try:
        if ":" in text:
            a, b = text.split(":", 1)
            return int(a), int(b)
        return int(text), int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected YEAR or START:END, got {text!r}") from None


def _write(out: Path, name: str, text: str, written: list[str]) -> None:
    (out / name).write_text(text, encoding="utf-8")
    written.append(name)


def _load(path, year=None, knn_k: int = 5, all_years: bool = False) -> tuple[Dataset, Dataset]:
    """Parse, optionally filter to one year, impute, normalise.

    Returns ``(raw, normalized)`` with identical record order.
    """
    if path is None:
        raise InputError("--in is required")
    try:
        data = read_dataset(path)
    except FileNotFoundError:
        raise InputError(f"input file not found: {path}") from None
    if len(data) == 0:
        raise InputError("input has no records")
    if not all_years:
        yr = data.years[-1] if year is None else year
        data = data.select_year(yr)
        if len(data) == 0:
            raise InputError(f"no records for year {yr}")
    data, n_dropped = drop_incomplete(data)
    if n_dropped:
        logger.warning("dropped %d severely incomplete record(s)", n_dropped)
    if data.missing_mask.any():
        data = knn_impute(data, min(knn_k, len(data) - 1) if len(data) > 1 else 1)
    return data, minmax_normalize(data)


def _read_labels(path) -> dict[str, int]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    try:
        return {r["zip"]: int(r["label"]) for r in rows}
    except (KeyError, ValueError):
        raise InputError(f"{path}: expected columns zip,label") from None


def _labels_csv(zips, labels) -> str:
    buf = io.StringIO()
    buf.write("zip,label\n")
    for z, lab in zip(zips, labels):
        buf.write(f"{z},{int(lab)}\n")
    return buf.getvalue()


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# --------------------------------------------------------------------------
# commands


def cmd_synth(args, out, written):
    try:
        cfg = SynthConfig(
            n_points=args.n,
            k_planted=args.k,
            years=args.years,
            seed=args.seed,
            missing_fraction=args.missing_fraction,
            noise_sd=args.noise_sd,
        )
    except ValueError as exc:
        raise InputError(str(exc)) from None
    data, labels = generate_synthetic(cfg)
    _write(out, "dataset.csv", serialize_dataset(data), written)
    first = data.years[0]
    idx = [i for i, r in enumerate(data.records) if r.year == first]
    _write(out, "labels.csv", _labels_csv([data.records[i].zip for i in idx], labels[idx]), written)
    return {}


def cmd_prep(args, out, written):
    try:
        data = read_dataset(args.inp)
    except FileNotFoundError:
        raise InputError(f"input file not found: {args.inp}") from None
    data, n_dropped = drop_incomplete(data)
    n_imputed = int(data.missing_mask.sum())
    if n_imputed:
        data = knn_impute(data, args.knn_k)
    norm = minmax_normalize(data)
    _write(out, "prepped.csv", serialize_dataset(norm), written)
    info = {
        "dropped_records": n_dropped,
        "imputed_cells": n_imputed,
        "knn_k": args.knn_k,
        "minmax": {k: list(v) for k, v in norm.normalization.items()},
    }
    _write(out, "normalization.json", _json(info), written)
    return {}


def _method_estimator(name, args, dm):
    if name == "dbscan":
        eps = args.eps if args.eps is not None else default_eps(dm, args.eps_percentile, args.min_pts)
        return DBSCAN(eps=eps, min_pts=args.min_pts)
    if name == "hdbscan":
        return HDBSCAN(min_cluster_size=args.min_cluster_size, min_samples=args.min_samples)
    if name == "qaoa":
        return QAOAClustering(n_clusters=args.k, p=args.p, shots=args.shots, encoding=args.encoding, random_state=args.seed)
    raise InputError(f"unknown method {name!r}")


def cmd_cluster(args, out, written):
    raw, norm = _load(args.inp, args.year, args.knn_k)
    if len(norm) < 2:
        raise InputError("need at least two records to cluster")
    dm = combined_distance(norm, args.geo_weight, 1.0 - args.geo_weight)
    if args.dump_dist:
        _write(out, "distances.csv", dm.to_csv(), written)
    diag: dict = {"method": args.method, "n_points": dm.n}
    t0 = time.perf_counter()
    if args.method == "dbscan":
        eps = args.eps if args.eps is not None else default_eps(dm, args.eps_percentile, args.min_pts)
        labels = dbscan(dm, eps, args.min_pts)
        diag.update(eps=eps, min_pts=args.min_pts)
    elif args.method == "hdbscan":
        labels, tree = hdbscan(dm, args.min_cluster_size, args.min_samples)
        diag.update(min_cluster_size=args.min_cluster_size, min_samples=args.min_samples)
        if args.dump_tree:
            _write(out, "condensed_tree.json", tree.to_json() + "\n", written)
    else:
        trace = [] if args.trace else None
        labels, qd = qaoa_cluster(dm, args.k, args.p, args.shots, args.seed, args.encoding, trace=trace)
        diag.update({k: v for k, v in qd.items() if k != "wall_time"})
        if trace is not None:
            header = ["iter"] + [f"gamma_{i + 1}" for i in range(args.p)] + [f"beta_{i + 1}" for i in range(args.p)] + ["energy"]
            lines = [",".join(header)] + [",".join(repr(float(v)) if j else str(v) for j, v in enumerate(row)) for row in trace]
            _write(out, "trace.csv", "\n".join(lines) + "\n", written)
    diag["wall_time"] = time.perf_counter() - t0
    diag["n_clusters"] = int(len(set(int(v) for v in labels if v >= 0)))
    diag["n_noise"] = int((np.asarray(labels) < 0).sum())

    lat, lon = raw.column("lat"), raw.column("lon")
    _write(out, "labels.csv", _labels_csv(raw.zips, labels), written)
    _write(out, "clusters.geojson", clusters_geojson(raw.zips, lat, lon, labels, raw.column("hiv_rate")) + "\n", written)
    _write(out, "clusters.svg", cluster_map_svg(lat, lon, labels, raw.zips), written)
    _write(out, "diagnostics.json", _json(diag), written)
    return {}


def cmd_bench(args, out, written):
    if args.render:
        try:
            report = BenchmarkReport.from_dict(json.loads(Path(args.render).read_text(encoding="utf-8")))
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise InputError(f"cannot read report {args.render}: {exc}") from None
        _write(out, "report.md", render_markdown(report), written)
        return {}
    raw, norm = _load(args.inp, args.year, args.knn_k)
    dm = combined_distance(norm, args.geo_weight, 1.0 - args.geo_weight)
    truth = None
    if args.truth:
        if not Path(args.truth).exists():
            logger.warning("truth file %s not found; accuracy and ARI reported as n/a", args.truth)
        else:
            table = _read_labels(args.truth)
            missing = [z for z in raw.zips if z not in table]
            if missing:
                raise InputError(f"truth file lacks {len(missing)} zip(s), e.g. {missing[0]}")
            truth = np.array([table[z] for z in raw.zips])
    methods = {
        TABLE_METHODS[0]: _method_estimator("dbscan", args, dm),
        TABLE_METHODS[1]: _method_estimator("hdbscan", args, dm),
        TABLE_METHODS[2]: _method_estimator("qaoa", args, dm),
    }
    report = benchmark(dm, truth, methods)
    _write(out, "report.json", report.to_json() + "\n", written)
    _write(out, "report.md", render_markdown(report), written)
    if all(r.error for r in report.rows):
        raise CapacityError("every method failed: " + "; ".join(r.error for r in report.rows))
    return {}


def cmd_forecast(args, out, written):
    raw, norm = _load(args.inp, knn_k=args.knn_k, all_years=True)
    try:
        sup = build_supervised(norm)
    except DataError as exc:
        raise InputError(str(exc)) from None
    X, y = sup.subset("train")
    Xv, yv = sup.subset("validation")
    if len(y) == 0 or len(yv) == 0:
        raise InputError("need at least three years so train and validation splits are non-empty")
    cfg = TrainConfig(args.lr, args.momentum, args.batch_size, args.max_epochs, args.patience, args.seed)
    models = ["classical", "hybrid"] if args.model == "both" else [args.model]
    evaluation = {}
    series = {}
    for name in models:
        rng = np.random.default_rng(args.seed)
        if name == "classical":
            model = MlpModel.init([X.shape[1], *args.hidden, 1], rng)
        else:
            model = HybridModel.init(X.shape[1], args.qubits, args.blocks, rng)
        hist = fit_model(model, X, y, Xv, yv, cfg)
        _write(out, f"history_{name}.csv", hist.to_csv(), written)
        ev = evaluate_forecast(model, sup)
        ev["best_epoch"] = hist.best_epoch
        ev["stopped_early"] = hist.stopped_early
        evaluation[name] = ev
        series[name] = [(int(yr), v["rmse"]) for yr, v in ev["years"].items()]
    _write(out, "evaluation.json", _json(evaluation), written)
    _write(out, "forecast.svg", line_chart_svg(series, "Predictive Model Performance", "RMSE by target year"), written)
    return {}


def _fit_causal(norm, args, variables):
    try:
        dd = discretize(norm, args.bins, variables)
    except DataError as exc:
        raise InputError(str(exc)) from None
    bn = BayesianNetwork(list(dd.variables), args.max_parents, args.restarts, 1.0, args.seed, _threads(args))
    bn.fit(dd)
    diag: list = []
    scores = influence_scores(bn.net_, args.target, args.method, args.shots, args.seed, diag)
    return dd, bn, scores, diag


def cmd_causal(args, out, written):
    raw, norm = _load(args.inp, knn_k=args.knn_k, all_years=True)
    if args.target not in norm.features:
        raise InputError(f"--target {args.target!r} is not a feature column ({', '.join(norm.features)})")
    variables = args.variables.split(",") if args.variables else None
    if variables is not None and args.target not in variables:
        variables.append(args.target)
    if variables is None:
        variables = [v for v in ("housing_instability", "stigma_index", "prep_rate") if v in norm.features and v != args.target]
        variables.append(args.target)
    dd, bn, scores, diag = _fit_causal(norm, args, variables)
    _write(out, "network.json", bn.net_.to_json(dd.bin_edges) + "\n", written)
    result = {
        "target": args.target,
        "method": args.method,
        "bic": bn.score_,
        "influence": [{"factor": f, "score": s} for f, s in scores],
    }
    if args.method == "quantum":
        result["quantum_diagnostics"] = diag
    if args.by_cluster:
        table = _read_labels(args.by_cluster)
        labels = np.array([table.get(r.zip, -1) for r in norm.records])
        strata = {}
        for lab in sorted(set(labels.tolist()) - {-1}):
            sub = norm.select(np.flatnonzero(labels == lab))
            if len(sub) < 10:
                continue
            _, _, s_scores, _ = _fit_causal(sub, args, variables)
            strata[str(lab)] = [{"factor": f, "score": s} for f, s in s_scores]
        result["per_cluster"] = {
            "note": "approximation: network re-fitted independently within each cluster",
            "clusters": strata,
        }
    _write(out, "influence.json", _json(result), written)
    _write(out, "influence.svg", bar_chart_svg(scores, "Causal Analysis of Risk Factors", f"influence on {args.target}"), written)
    return {}


COMMANDS = {
    "synth": cmd_synth,
    "prep": cmd_prep,
    "cluster": cmd_cluster,
    "bench": cmd_bench,
    "forecast": cmd_forecast,
    "causal": cmd_causal,
}


# --------------------------------------------------------------------------
# parser


def _common(p, needs_input=True):
    p.add_argument("--in", dest="inp", required=needs_input, help="input dataset CSV")
    p.add_argument("-o", "--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None, help="worker cap (fallback: QEPI_THREADS)")
    p.add_argument("--trace", action="store_true", help="write per-iteration optimizer trace")
    p.add_argument("--knn-k", type=int, default=5, help="neighbours for imputation")
    p.add_argument("-v", "--verbose", action="store_true")


def _cluster_flags(p):
    p.add_argument("--year", type=int, default=None, help="year to cluster (default: latest)")
    p.add_argument("--geo-weight", type=float, default=0.5)
    p.add_argument("--k", type=int, default=2, help="clusters for QAOA")
    p.add_argument("--p", type=int, default=2, help="QAOA depth")
    p.add_argument("--shots", type=int, default=1024)
    p.add_argument("--encoding", choices=("compact2", "onehot"), default=None)
    p.add_argument("--eps", type=float, default=None)
    p.add_argument("--eps-percentile", type=float, default=60.0)
    p.add_argument("--min-pts", type=int, default=4)
    p.add_argument("--min-cluster-size", type=int, default=4)
    p.add_argument("--min-samples", type=int, default=4)


def _hidden(text):
    try:
        return tuple(int(v) for v in text.split(",") if v)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated sizes, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qepi", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"qepi {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a planted-cluster dataset")
    _common(p, needs_input=False)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--years", type=_years, default=(2022, 2022))
    p.add_argument("--missing-fraction", type=float, default=0.0)
    p.add_argument("--noise-sd", type=float, default=0.05)

    p = sub.add_parser("prep", help="impute and normalise a dataset")
    _common(p)

    p = sub.add_parser("cluster", help="cluster one year of records")
    _common(p)
    p.add_argument("--method", choices=("dbscan", "hdbscan", "qaoa"), required=True)
    _cluster_flags(p)
    p.add_argument("--dump-dist", action="store_true")
    p.add_argument("--dump-tree", action="store_true")

    p = sub.add_parser("bench", help="compare DBSCAN, HDBSCAN and QAOA clustering")
    _common(p, needs_input=False)
    p.add_argument("--truth", default=None, help="planted labels CSV (zip,label)")
    p.add_argument("--render", default=None, help="render an existing report JSON to markdown")
    _cluster_flags(p)

    p = sub.add_parser("forecast", help="train next-year prevalence forecasters")
    _common(p)
    p.add_argument("--model", choices=("classical", "hybrid", "both"), default="both")
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--max-epochs", type=int, default=200)
    p.add_argument("--patience", type=int, default=20)
    p.add_argument("--hidden", type=_hidden, default=(16, 8))
    p.add_argument("--qubits", type=int, default=4)
    p.add_argument("--blocks", type=int, default=2)

    p = sub.add_parser("causal", help="learn a Bayesian network and rank risk factors")
    _common(p)
    p.add_argument("--target", default="hiv_rate")
    p.add_argument("--bins", type=int, default=3)
    p.add_argument("--method", choices=("exact", "quantum"), default="exact")
    p.add_argument("--max-parents", type=int, default=2)
    p.add_argument("--restarts", type=int, default=5)
    p.add_argument("--shots", type=int, default=8192)
    p.add_argument("--variables", default=None, help="comma-separated variable roster")
    p.add_argument("--by-cluster", default=None, help="labels CSV for per-cluster re-fitting")
    return parser


def _manifest(args, argv, written, wall, threads) -> str:
    flags = {k: (list(v) if isinstance(v, tuple) else v) for k, v in sorted(vars(args).items())}
    return _json(
        {
            "command": args.command,
            "argv": list(argv),
            "flags": flags,
            "seeds": {"seed": args.seed},
            "inputs": [v for v in (getattr(args, "inp", None), getattr(args, "truth", None), getattr(args, "render", None), getattr(args, "by_cluster", None)) if v],
            "outputs": sorted(written),
            "out_dir": str(args.out),
            "threads": threads,
            "tool_version": __version__,
            "wall_time": wall,
            "created_utc": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        }
    )


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    t0 = time.perf_counter()
    out = Path(args.out)
    written: list[str] = []
    try:
        threads = _threads(args)
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](args, out, written)
    except CapacityError as exc:
        print(f"qepi {args.command}: infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (InputError, DataError, ValueError) as exc:
        print(f"qepi {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    (out / "manifest.json").write_text(_manifest(args, argv, written, time.perf_counter() - t0, threads), encoding="utf-8")
    return 0


if __name__ == "__main__":
    sys.exit(main())
