"""Command-line front end: dataset generation, selection, evaluation, and
the bundled desk-scale verification protocol.

Exit codes: 0 success, 1 runtime error, 2 usage error. All randomness flows
from --seed/--seeds; reruns with identical flags produce byte-identical
selection and report files (wall-clock info goes to a separate run_info.json
that carries no result data).
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import metrics as metrics_mod
from .classifiers import TrainSchedule, default_batch_size, knn_predict, probe_predict, probe_train
from .errors import PoolselError
from .store import (
    EmbeddingMatrix,
    LabelVector,
    SelectionResult,
    load_embeddings,
    load_labels,
    load_selection,
    save_embeddings,
    save_labels,
    save_selection,
)
from .strategies import (
    BudgetSchedule,
    StrategyConfig,
    select_coreset,
    select_kmeans_multi,
    select_kmeans_single,
    select_max_entropy,
    select_random,
    select_uniform,
    select_uniform_kmeans,
)
from .synth import BlobSpec, make_blob_split, make_longtail


class UsageError(Exception):
    """Bad flag combination detected after parsing; exits with code 2."""


_STRATEGY_IDS = {
    "random": "random",
    "uniform": "uniform",
    "uniform-capped": "uniform_capped",
    "kmeans": "kmeans_single",
    "kmeans-multi": "kmeans_multi",
    "coreset": "coreset",
    "max-entropy": "max_entropy",
    "uniform-kmeans": "uniform_kmeans",
}

_METRIC_NAMES = ("coverage", "histogram", "knn", "linear")


def _parse_int_list(text: str) -> list[int]:
    try:
        return [int(part) for part in str(text).split(",") if part != ""]
    except ValueError as e:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from e


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key=value config file; flags override it")
    parser.add_argument("--out-dir", default=".", help="output directory (created if missing)")
    parser.add_argument("--seed", type=int, default=0, help="base RNG seed")
    parser.add_argument("--threads", type=int, default=1, help="parallel (strategy, seed) cells")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="poolsel",
        description="Low-budget sample selection over embedding pools.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate synthetic train/test embedding pools")
    _add_common(gen)
    kind = gen.add_mutually_exclusive_group(required=True)
    kind.add_argument("--blobs", action="store_true", help="balanced Gaussian blobs")
    kind.add_argument("--longtail", action="store_true", help="geometric long-tail class sizes")
    gen.add_argument("--classes", type=int, required=True)
    gen.add_argument("--per-class", type=int, help="pool size per class (blobs)")
    gen.add_argument("--max", type=int, dest="max_count", help="largest class size (longtail)")
    gen.add_argument("--min", type=int, dest="min_count", help="smallest class size (longtail)")
    gen.add_argument("--exponent", type=float, default=1.0, help="longtail shape exponent")
    gen.add_argument("--dim", type=int, default=16)
    gen.add_argument("--sigma", type=float, default=1.0, help="intra-class std")
    gen.add_argument("--scale", type=float, default=10.0, help="center coordinate range")
    gen.add_argument("--test-per-class", type=int, default=50)

    sel = sub.add_parser("select", help="run a selection strategy, one SEL1 file per seed")
    _add_common(sel)
    sel.add_argument("--strategy", choices=sorted(_STRATEGY_IDS), required=True)
    sel.add_argument("--embeddings", required=True, help="EMB1 pool features")
    sel.add_argument("--labels", help="LBL1 labels (uniform strategies, max-entropy oracle)")
    sel.add_argument("--budget", type=int, help="single-round budget")
    sel.add_argument("--schedule", help="cumulative budgets, e.g. 10,20,50")
    sel.add_argument("--seeds", help="comma-separated seeds; overrides --seed")
    sel.add_argument("--per-class", type=int, help="uniform: samples per class")
    sel.add_argument("--clusters", type=int, help="uniform-kmeans: cluster count")
    sel.add_argument("--per-cluster", type=int, help="uniform-kmeans: samples per cluster")
    sel.add_argument("--normalize-features", action="store_true", help="L2-normalize before selecting")
    sel.add_argument("--kmeans-max-iter", type=int, default=100)
    sel.add_argument("--kmeans-tol", type=float, default=1e-4)
    sel.add_argument(
        "--recluster-unlabeled-only",
        action="store_true",
        help="multi-batch: cluster only the not-yet-selected pool",
    )
    sel.add_argument("--initial", help="SEL1 file used as the first round (coreset/max-entropy)")
    sel.add_argument(
        "--initial-strategy",
        choices=("random", "kmeans"),
        default="random",
        help="generate the first round with this strategy when --initial is absent",
    )
    sel.add_argument("--probe-lr", type=float, default=0.001)
    sel.add_argument("--probe-epochs", type=int, default=100)
    sel.add_argument("--probe-milestones", default="50,75")
    sel.add_argument("--probe-batch-size", type=int, help="default: 128, or 4 for tiny pools")

    ev = sub.add_parser("eval", help="evaluate SEL1 selections and aggregate over seeds")
    _add_common(ev)
    ev.add_argument("--selections", nargs="+", required=True, help="SEL1 files")
    ev.add_argument("--train-embeddings", required=True)
    ev.add_argument("--train-labels", required=True)
    ev.add_argument("--test-embeddings")
    ev.add_argument("--test-labels")
    ev.add_argument("--metrics", default="coverage", help=f"subset of {','.join(_METRIC_NAMES)}")
    ev.add_argument("--probe-lr", type=float, default=0.01)
    ev.add_argument("--probe-epochs", type=int, default=100)
    ev.add_argument("--probe-milestones", default="50,75")
    ev.add_argument("--probe-batch-size", type=int, help="default: 128, or 4 for tiny pools")

    rep = sub.add_parser("reproduce", help="run the bundled verification protocol")
    _add_common(rep)
    rep.add_argument("--quick", action="store_true", help="fast subset (under a minute)")
    rep.add_argument("--only", help="comma-separated criterion names, e.g. A1,A8")

    parser.subparsers_by_command = {"gen": gen, "select": sel, "eval": ev, "reproduce": rep}
    return parser


def _apply_config(args: argparse.Namespace, subparser: argparse.ArgumentParser, argv: list[str]) -> None:
    """Overlay config-file values under explicitly passed flags.

    Precedence: defaults < config file < command line. A flag counts as
    explicit when its option string appears in argv. Values are coerced
    with the option's registered type (flags parse as booleans).
    """
    if not args.config:
        return
    path = Path(args.config)
    if not path.exists():
        raise UsageError(f"config file not found: {path}")
    actions = {
        action.dest: action for action in subparser._actions if action.dest != "help"
    }
    explicit = set()
    for token in argv:
        if token.startswith("--"):
            explicit.add(token.split("=", 1)[0][2:].replace("-", "_"))
    for line_no, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{line_no}: expected key=value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        dest = key.replace("-", "_")
        if dest not in actions:
            raise UsageError(f"{path}:{line_no}: unknown option {key!r}")
        if dest in explicit:
            continue
        action = actions[dest]
        try:
            if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
                parsed = value.lower() in ("1", "true", "yes", "on")
            elif action.type is not None:
                parsed = action.type(value)
            else:
                parsed = value
        except ValueError as e:
            raise UsageError(f"{path}:{line_no}: bad value for {key!r}: {e}") from e
        setattr(args, dest, parsed)


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_run_info(out: Path) -> None:
    # Wall-clock provenance lives outside the deterministic outputs.
    (out / "run_info.json").write_text(
        json.dumps({"timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z")}) + "\n"
    )


def cmd_gen(args) -> int:
    if args.blobs:
        if args.per_class is None:
            raise UsageError("--blobs requires --per-class")
        counts = (args.per_class,) * args.classes
    else:
        if args.max_count is None or args.min_count is None:
            raise UsageError("--longtail requires --max and --min")
        counts = tuple(make_longtail(args.classes, args.max_count, args.min_count, args.exponent))
    spec = BlobSpec(
        per_class_counts=counts,
        dim=args.dim,
        center_scale=args.scale,
        sigma=args.sigma,
        seed=args.seed,
    )
    xtr, ytr, xte, yte = make_blob_split(spec, test_per_class=args.test_per_class)
    out = _out_dir(args)
    save_embeddings(xtr, out / "train.emb")
    save_labels(ytr, out / "train.lbl")
    save_embeddings(xte, out / "test.emb")
    save_labels(yte, out / "test.lbl")
    print(f"gen: wrote {xtr.n}x{xtr.d} train and {xte.n}x{xte.d} test pools to {out}")
    return 0


def _probe_schedule_from_args(args, n_train: int) -> TrainSchedule:
    milestones = tuple(_parse_int_list(args.probe_milestones))
    if args.probe_milestones == "50,75":
        # Default milestones track shortened runs; explicit ones validate as-is.
        milestones = tuple(m for m in milestones if m < args.probe_epochs)
    return TrainSchedule(
        lr=args.probe_lr,
        milestones=milestones,
        epochs=args.probe_epochs,
        batch_size=args.probe_batch_size or default_batch_size(n_train),
    )


def _select_one(args, strategy_id, pool, labels, schedule, seed) -> SelectionResult:
    probe_schedule = None
    if strategy_id == "max_entropy":
        defaults = (0.001, 100, "50,75", None)
        given = (args.probe_lr, args.probe_epochs, args.probe_milestones, args.probe_batch_size)
        if given != defaults:
            probe_schedule = _probe_schedule_from_args(args, schedule.cumulative_sizes[0])
    cfg = StrategyConfig(
        seed=seed,
        normalize_features=args.normalize_features,
        kmeans_max_iter=args.kmeans_max_iter,
        kmeans_tol=args.kmeans_tol,
        recluster_unlabeled_only=args.recluster_unlabeled_only,
        probe_schedule=probe_schedule,
    )
    if strategy_id == "random":
        return select_random(pool.n, schedule.total, seed)
    if strategy_id in ("uniform", "uniform_capped"):
        return select_uniform(labels, args.per_class, seed, capped=strategy_id == "uniform_capped")
    if strategy_id == "kmeans_single":
        return select_kmeans_single(pool, schedule.total, cfg)
    if strategy_id == "kmeans_multi":
        return select_kmeans_multi(pool, schedule, cfg)
    if strategy_id == "uniform_kmeans":
        return select_uniform_kmeans(pool, args.clusters, args.per_cluster, cfg)

    # Iterative strategies consume an initial round.
    if args.initial:
        initial = load_selection(args.initial)
    elif args.initial_strategy == "random":
        initial = select_random(pool.n, schedule.cumulative_sizes[0], seed)
    else:
        initial = select_kmeans_single(pool, schedule.cumulative_sizes[0], cfg)
    if strategy_id == "coreset":
        return select_coreset(pool, schedule, initial, cfg)
    return select_max_entropy(pool, schedule, initial, labels, cfg)


def cmd_select(args) -> int:
    strategy_id = _STRATEGY_IDS[args.strategy]
    pool = load_embeddings(args.embeddings)  # fail fast before any output
    labels = None
    if strategy_id in ("uniform", "uniform_capped", "max_entropy"):
        if not args.labels:
            raise UsageError(f"strategy {args.strategy} requires --labels")
        labels = load_labels(args.labels)
        if labels.n != pool.n:
            raise UsageError(f"labels cover {labels.n} rows but pool has {pool.n}")
    elif args.labels:
        labels = load_labels(args.labels)

    if strategy_id in ("uniform", "uniform_capped"):
        if args.per_class is None:
            raise UsageError(f"strategy {args.strategy} requires --per-class")
        schedule = None
    elif strategy_id == "uniform_kmeans":
        if args.clusters is None or args.per_cluster is None:
            raise UsageError("uniform-kmeans requires --clusters and --per-cluster")
        schedule = None
    else:
        if args.schedule:
            schedule = BudgetSchedule.parse(args.schedule)
        elif args.budget is not None:
            schedule = BudgetSchedule.single(args.budget)
        else:
            raise UsageError(f"strategy {args.strategy} requires --budget or --schedule")
        if strategy_id in ("coreset", "max_entropy") and schedule.rounds < 2 and not args.initial:
            # A one-round schedule would return the initial pool unchanged.
            raise UsageError(f"strategy {args.strategy} needs a multi-round --schedule")

    seeds = _parse_int_list(args.seeds) if args.seeds else [args.seed]
    out = _out_dir(args)

    def run(seed: int) -> Path:
        sel = _select_one(args, strategy_id, pool, labels, schedule, seed)
        path = out / f"{strategy_id}_b{sel.size}_s{seed}.sel.json"
        save_selection(sel, path)
        return path

    if args.threads > 1 and len(seeds) > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=args.threads) as pool_exec:
            paths = list(pool_exec.map(run, seeds))
    else:
        paths = [run(seed) for seed in seeds]
    _write_run_info(out)
    for path in paths:
        print(f"select: wrote {path}")
    return 0


def _metric_values(
    sel: SelectionResult,
    train_pool: EmbeddingMatrix,
    train_labels: LabelVector,
    test_pool,
    test_labels,
    wanted: list[str],
    args,
) -> dict:
    values: dict = {
        "coverage": metrics_mod.category_coverage(sel, train_labels),
        "histogram": metrics_mod.occurrence_histogram(sel, train_labels),
    }
    if "knn" in wanted or "linear" in wanted:
        idx = np.asarray(sel.indices, dtype=np.int64)
        sel_feats = train_pool.rows(idx)
        sel_labels = LabelVector(
            train_labels.labels[idx], num_classes=train_labels.num_classes
        )
        if "knn" in wanted:
            preds = knn_predict(sel_feats, sel_labels, test_pool)
            values["knn_top1"] = metrics_mod.top1_accuracy(preds, test_labels.labels)
            values["knn_mean_per_class"] = metrics_mod.mean_per_class_accuracy(
                preds, test_labels.labels, test_labels.num_classes
            )
        if "linear" in wanted:
            sched = _probe_schedule_from_args(args, sel.size)
            model = probe_train(sel_feats, sel_labels, sched, seed=sel.seed)
            preds = probe_predict(model, test_pool)
            values["linear_top1"] = metrics_mod.top1_accuracy(preds, test_labels.labels)
            values["linear_mean_per_class"] = metrics_mod.mean_per_class_accuracy(
                preds, test_labels.labels, test_labels.num_classes
            )
    return values


def cmd_eval(args) -> int:
    wanted = [m.strip() for m in args.metrics.split(",") if m.strip()]
    unknown = set(wanted) - set(_METRIC_NAMES)
    if unknown:
        raise UsageError(f"unknown metrics {sorted(unknown)}; pick from {_METRIC_NAMES}")
    train_pool = load_embeddings(args.train_embeddings)
    train_labels = load_labels(args.train_labels)
    if train_labels.n != train_pool.n:
        raise UsageError("train labels/pool size mismatch")
    test_pool = test_labels = None
    if "knn" in wanted or "linear" in wanted:
        if not (args.test_embeddings and args.test_labels):
            raise UsageError("knn/linear metrics require --test-embeddings and --test-labels")
        test_pool = load_embeddings(args.test_embeddings)
        test_labels = load_labels(args.test_labels)
        if test_labels.n != test_pool.n:
            raise UsageError("test labels/pool size mismatch")

    selections = [load_selection(p) for p in args.selections]
    for sel in selections:
        sel.validate_for_pool(train_pool.n)

    def evaluate(sel: SelectionResult) -> dict:
        return _metric_values(sel, train_pool, train_labels, test_pool, test_labels, wanted, args)

    if args.threads > 1 and len(selections) > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=args.threads) as pool_exec:
            per_run = list(pool_exec.map(evaluate, selections))
    else:
        per_run = [evaluate(sel) for sel in selections]

    # Group runs into (strategy, final budget) cells, seeds side by side.
    cells: dict[tuple[str, int], dict] = {}
    for sel, values in zip(selections, per_run):
        key = (sel.strategy, sel.size)
        cell = cells.setdefault(key, {"strategy": sel.strategy, "budget": sel.size, "runs": []})
        cell["runs"].append({"seed": sel.seed, **_jsonable(values)})

    scalar_keys = {
        "coverage": "coverage",
        "knn": "knn_top1",
        "linear": "linear_top1",
    }
    aggregate_fields = (
        "coverage",
        "knn_top1",
        "knn_mean_per_class",
        "linear_top1",
        "linear_mean_per_class",
    )
    out = _out_dir(args)
    doc_cells = []
    for key in sorted(cells):
        cell = cells[key]
        cell["runs"].sort(key=lambda r: r["seed"])
        for field in aggregate_fields:
            values = [r[field] for r in cell["runs"] if field in r]
            if values:
                mean, std = metrics_mod.mean_std(values)
                cell[f"{field}_mean"] = mean
                cell[f"{field}_std"] = std
        doc_cells.append(cell)

    doc = {
        "metrics": wanted,
        "train_embeddings": str(args.train_embeddings),
        "train_labels": str(args.train_labels),
        "cells": doc_cells,
    }
    (out / "metrics.json").write_text(json.dumps(doc, indent=2) + "\n")

    strategies_seen = sorted({c["strategy"] for c in doc_cells})
    budgets_seen = sorted({c["budget"] for c in doc_cells})
    for metric in wanted:
        if metric == "histogram":
            for cell in doc_cells:
                hists = [r["histogram"] for r in cell["runs"]]
                merged: dict[int, float] = {}
                for h in hists:
                    for k, v in h.items():
                        merged[int(k)] = merged.get(int(k), 0.0) + v / len(hists)
                tidy = {k: (int(v) if v == int(v) else round(v, 6)) for k, v in merged.items()}
                csv_path = out / f"histogram_{cell['strategy']}_b{cell['budget']}.csv"
                csv_path.write_text(metrics_mod.histogram_csv(tidy))
            continue
        field = scalar_keys[metric]
        grid = {}
        for cell in doc_cells:
            if f"{field}_mean" in cell:
                grid[(cell["strategy"], str(cell["budget"]))] = metrics_mod.format_cell(
                    cell[f"{field}_mean"], cell[f"{field}_std"]
                )
        if grid:
            table = metrics_mod.format_grid(
                strategies_seen, [str(b) for b in budgets_seen], grid, title=metric
            )
            (out / f"table_{metric}.txt").write_text(table)
            print(table, end="")
    _write_run_info(out)
    print(f"eval: wrote {out / 'metrics.json'}")
    return 0


def _jsonable(values: dict) -> dict:
    out = {}
    for k, v in values.items():
        if isinstance(v, dict):
            out[k] = {str(kk): vv for kk, vv in v.items()}
        else:
            out[k] = v
    return out


def cmd_reproduce(args) -> int:
    from .acceptance import run_acceptance

    names = [s.strip().upper() for s in args.only.split(",")] if args.only else None
    results = run_acceptance(names=names, quick=args.quick)
    failures = [r for r in results if not r.passed]
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{r.name} {status} - {r.title}: {r.detail} ({r.seconds:.1f}s)")
    if failures:
        print(f"reproduce: {len(failures)} criterion(s) failed: "
              + ", ".join(r.name for r in failures), file=sys.stderr)
        return 1
    print(f"reproduce: all {len(results)} criteria passed")
    return 0


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_config(args, parser.subparsers_by_command[args.command], argv)
        handler = {
            "gen": cmd_gen,
            "select": cmd_select,
            "eval": cmd_eval,
            "reproduce": cmd_reproduce,
        }[args.command]
        return handler(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 2
    except PoolselError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
