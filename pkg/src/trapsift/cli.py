"""Single command-line entry point for every workflow.

Commands are thin shells over the library: no metric math lives here. Human
summaries go to stdout; every artifact is a file, so commands compose in
pipelines. Exit codes: 0 success, 2 usage or missing input, 3 data or
integrity error, 4 backend error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import threading
from pathlib import Path

import numpy as np

from . import bench as benchmod
from . import filterpipe, manifest as manifestmod, metrics, plotting, scorestore, splitgen
from .backends import PreparedInput, ReplayBackend, get_backend
from .errors import (
    BackendError,
    ConfigError,
    IntegrityError,
    JoinError,
    ManifestParseError,
    TrapsiftError,
    UnsupportedFeatureError,
    ValidationError,
)

BACKEND_ENV = "TRAPSIFT_BACKEND"


class UsageError(Exception):
    pass


def write_json(data: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(data, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _require_file(path_str: str, what: str) -> Path:
    path = Path(path_str)
    if not path.is_file():
        raise FileNotFoundError(f"{what} not found: {path}")
    return path


def _load_eval_set(scores_path: str, labels_path: str):
    run, records = scorestore.read_scores(_require_file(scores_path, "score file"))
    labels = manifestmod.read_labeled_csv(_require_file(labels_path, "labels file"))
    joined = scorestore.join(records, labels)
    if joined.unmatched_scores or joined.unmatched_labels:
        print(
            f"joined {len(joined.eval_set.items)} items "
            f"(unmatched scores={joined.unmatched_scores}, labels={joined.unmatched_labels})"
        )
    return run, joined.eval_set


def cmd_ingest(args) -> int:
    policy = manifestmod.LabelPolicy(
        empty_categories=frozenset(args.empty_category)
        if args.empty_category
        else manifestmod.DEFAULT_EMPTY_CATEGORIES,
        require_bbox_for_nonempty=args.require_bbox,
    )
    season_map = None
    if args.season_map:
        season_map = manifestmod.load_season_map(_require_file(args.season_map, "season map"))
    man = manifestmod.parse_manifest(_require_file(args.manifest, "manifest"), season_map)
    labeled = manifestmod.to_labeled(man, policy)
    manifestmod.write_labeled_csv(labeled, args.out)
    summary = manifestmod.summarize(labeled)
    print(
        f"labeled {summary.total} images: "
        f"empty={summary.by_label[manifestmod.EMPTY]} "
        f"nonempty={summary.by_label[manifestmod.NONEMPTY]} "
        f"excluded={summary.excluded_count} corrupt_excluded={man.corrupt_excluded} "
        f"locations={len(summary.by_location)}"
    )
    if args.summary_out:
        write_json(summary.as_dict() | {"corrupt_excluded": man.corrupt_excluded}, args.summary_out)
    return 0


def cmd_split(args) -> int:
    randomized = bool(args.holdout or args.cap > 0 or args.balance)
    if randomized and args.seed is None:
        raise UsageError("--seed is required when --holdout, --cap > 0 or --balance is used")
    labeled = manifestmod.read_labeled_csv(_require_file(args.labels, "labels file"))
    assignment = splitgen.load_assignment_csv(_require_file(args.assignment, "assignment file"))
    if args.mode == "location":
        result = splitgen.split_by_location(labeled, assignment)
    else:
        result = splitgen.split_by_time(labeled, assignment)

    train, val_dev = result.train, result.val_dev
    if args.holdout:
        train, held = splitgen.random_location_holdout(train, args.holdout, args.seed)
        val_dev = manifestmod.LabeledSet(val_dev.items + held.items)
    if args.cap > 0:
        train = splitgen.cap_class_per_location(train, manifestmod.EMPTY, args.cap, args.seed)
        val_dev = splitgen.cap_class_per_location(val_dev, manifestmod.EMPTY, args.cap, args.seed)
    if args.balance:
        train = splitgen.balance_classes(train, args.seed)

    result = splitgen.SplitResult(
        train=train,
        val_dev=val_dev,
        val=result.val,
        provenance={
            "policy": args.mode,
            "seed": args.seed,
            "holdout_locations": args.holdout or 0,
            "empty_cap_per_location": args.cap,
            "balanced_train": bool(args.balance),
        },
    )
    paths = splitgen.save_split(result, args.out)
    for name, part in result.partitions().items():
        print(
            f"{name}: {len(part)} items "
            f"(empty={part.count(manifestmod.EMPTY)}, nonempty={part.count(manifestmod.NONEMPTY)})"
        )
    print(f"wrote {paths['provenance']}")
    return 0


def cmd_calibrate(args) -> int:
    run, eval_set = _load_eval_set(args.scores, args.labels)
    result = metrics.calibrate_threshold(eval_set, args.target_recall)
    write_json(result.to_dict() | {"run_id": run.run_id}, args.out)
    p = result.point
    print(
        f"{run.run_id}: threshold={result.threshold:.6g} recall={p.recall:.4f} "
        f"precision={p.precision:.4f} tnr={p.tnr:.4f} (target recall {args.target_recall})"
    )
    return 0


def cmd_eval(args) -> int:
    run, eval_set = _load_eval_set(args.scores, args.labels)
    if args.threshold is not None:
        threshold = args.threshold
        source = "explicit"
    else:
        threshold = metrics.calibrate_threshold(eval_set, args.target_recall).threshold
        source = f"calibrated@{args.target_recall}"
    point = metrics.metrics_at(eval_set, threshold)
    auc = metrics.pr_auc(eval_set)
    report = {
        "run_id": run.run_id,
        "threshold": threshold,
        "threshold_source": source,
        "operating_point": point.to_dict(),
        "pr_auc": auc,
    }
    write_json(report, args.out)
    if args.curve_out:
        metrics.write_curve_csv(metrics.pr_curve(eval_set), args.curve_out)
    print(
        f"{run.run_id}: threshold={threshold:.6g} precision={point.precision:.4f} "
        f"recall={point.recall:.4f} tnr={point.tnr:.4f} pr_auc={auc:.4f}"
    )
    return 0


def cmd_compare(args) -> int:
    run_a, eval_a = _load_eval_set(args.scores, args.labels)
    run_b, eval_b = _load_eval_set(args.scores_b, args.labels)
    delta = metrics.compare_runs(
        eval_a,
        eval_b,
        target_recall=args.target_recall,
        degradation_margin=args.margin,
        run_a=run_a.run_id,
        run_b=run_b.run_id,
    )
    write_json(delta.to_dict() | {"target_recall": args.target_recall, "margin": args.margin}, args.out)
    verdict = "DEGRADED" if delta.degraded else "ok"
    print(
        f"{run_a.run_id} -> {run_b.run_id}: precision {delta.precision_delta:+.4f}, "
        f"tnr {delta.tnr_delta:+.4f} [{verdict}]"
    )
    return 0


def _make_backend(args):
    name = args.backend or os.environ.get(BACKEND_ENV, "replay")
    kwargs = {}
    if name == "replay":
        if getattr(args, "replay_scores", None):
            mapping = json.loads(_require_file(args.replay_scores, "replay scores").read_text())
            kwargs["scores"] = {str(k): float(v) for k, v in mapping.items()}
        if getattr(args, "replay_latencies", None):
            kwargs["latencies_ms"] = [float(v) for v in args.replay_latencies.split(",")]
        if getattr(args, "replay_score", None) is not None:
            kwargs["default_score"] = args.replay_score
        if getattr(args, "replay_sleep_ms", None) is not None:
            kwargs["sleep_ms"] = args.replay_sleep_ms
    elif not getattr(args, "model", None):
        raise UsageError(f"backend {name!r} needs --model")
    backend = get_backend(name, **kwargs)
    backend.load(getattr(args, "model", None))
    return backend


def _bench_input(args, backend) -> PreparedInput:
    size = args.size or backend.metadata().get("input_resolution") or 224
    spec = filterpipe.PreprocessSpec(target_size=size, pixel_scale=args.scale)
    if args.input:
        data = _require_file(args.input, "input image").read_bytes()
        return PreparedInput(filterpipe.preprocess(data, spec), source_id=args.input)
    shape = (size, size, 3)
    return PreparedInput(np.zeros(shape, dtype=np.float32), source_id="synthetic")


def cmd_bench(args) -> int:
    backend = _make_backend(args)
    prepared = _bench_input(args, backend)
    clock = backend.clock if isinstance(backend, ReplayBackend) and args.replay_latencies else None
    config = benchmod.BenchConfig(
        warmup_runs=args.warmup,
        measured_runs=args.runs,
        input=prepared,
        **({"clock": clock} if clock else {}),
    )
    report = benchmod.run_bench(backend, config)
    if args.memory:
        try:
            report.peak_memory_bytes = benchmod.measure_memory(backend, prepared)
        except UnsupportedFeatureError:
            print("memory introspection unavailable; omitting peak_memory_bytes", file=sys.stderr)
    write_json(report.to_dict(), args.out)
    mem = f" peak_memory={report.peak_memory_bytes}" if report.peak_memory_bytes else ""
    print(
        f"mean={report.mean_ms:.3f}ms std={report.std_ms:.3f}ms "
        f"min={report.min_ms:.3f}ms max={report.max_ms:.3f}ms{mem} "
        f"({args.runs} runs, {args.warmup} warmup)"
    )
    return 0


def _resolve_threshold(args) -> float:
    if args.threshold is not None:
        return args.threshold
    if args.calibration:
        doc = json.loads(_require_file(args.calibration, "calibration file").read_text())
        return float(doc["threshold"])
    raise UsageError("need --threshold or --calibration")


def cmd_filter(args) -> int:
    backend = _make_backend(args)
    threshold = _resolve_threshold(args)
    cfg = filterpipe.FilterConfig(
        threshold=threshold,
        action=args.action,
        quarantine_dir=Path(args.quarantine) if args.quarantine else None,
        patterns=tuple(args.patterns.split(",")),
        sidecar_marker=args.marker,
    )
    spec = filterpipe.PreprocessSpec(
        target_size=args.size or backend.metadata().get("input_resolution") or 224,
        pixel_scale=args.scale,
    )
    sink = filterpipe.decision_appender(args.out) if args.out else None
    if args.out:
        Path(args.out).write_text("")  # start a fresh log
    if args.watch:
        stop = threading.Event()
        decisions, report = filterpipe.watch_directory(
            args.watch,
            cfg,
            spec,
            backend,
            stop=stop,
            poll_interval=args.poll_interval,
            idle_timeout=args.idle_timeout,
            decision_sink=sink,
        )
    else:
        if not args.images:
            raise UsageError("no input images: pass paths or --watch DIR")
        paths = [str(_require_file(p, "image")) for p in args.images]
        decisions, report = filterpipe.run_filter(paths, cfg, spec, backend, decision_sink=sink)
    if args.report_out:
        write_json(report.to_dict(), args.report_out)
    print(
        f"processed={report.n_processed} discarded={report.n_discarded} "
        f"errors={report.n_errors} bytes_saved={report.bytes_saved} "
        f"discard_fraction={report.discard_fraction:.4f}"
    )
    return 0


def cmd_simulate(args) -> int:
    run, eval_set = _load_eval_set(args.scores, args.labels)
    if args.threshold is not None:
        threshold = args.threshold
    else:
        threshold = metrics.calibrate_threshold(eval_set, args.target_recall).threshold
    byte_sizes = None
    if args.byte_sizes:
        byte_sizes = {}
        import csv as _csv

        with open(_require_file(args.byte_sizes, "byte sizes"), newline="") as fh:
            for row in _csv.reader(fh):
                if len(row) >= 2 and row[0] != "image_id":
                    byte_sizes[row[0]] = int(row[1])
    point, savings = filterpipe.simulate_filter(eval_set, threshold, byte_sizes)
    write_json(
        {
            "run_id": run.run_id,
            "threshold": threshold,
            "operating_point": point.to_dict(),
            "savings": savings.to_dict(),
        },
        args.out,
    )
    print(
        f"{run.run_id}: at threshold {threshold:.6g} would discard "
        f"{savings.n_discarded}/{savings.n_processed} images "
        f"({savings.discard_fraction:.2%}), tnr={point.tnr:.4f} recall={point.recall:.4f}"
    )
    return 0


def cmd_plot(args) -> int:
    if args.mode == "pr":
        entries = []
        for path_str in args.inputs:
            path = _require_file(path_str, "curve CSV")
            curve = metrics.read_curve_csv(path)
            entries.append((path.stem, curve, metrics.auc_of_curve(curve)))
        if not entries:
            raise UsageError("pass at least one curve CSV")
        svg = plotting.render_pr_svg(entries)
    else:
        points = []
        for pair in args.inputs:
            if ":" not in pair:
                raise UsageError(f"latency-auc points are BENCH.json:EVAL.json pairs, got {pair!r}")
            bench_path, eval_path = pair.split(":", 1)
            bench_doc = json.loads(_require_file(bench_path, "bench report").read_text())
            eval_doc = json.loads(_require_file(eval_path, "eval report").read_text())
            label = eval_doc.get("run_id", Path(eval_path).stem)
            points.append((label, float(bench_doc["mean_ms"]), float(eval_doc["pr_auc"])))
        svg = plotting.render_latency_auc_svg(points)
    plotting.write_svg(svg, args.out)
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trapsift",
        description="Filter empty camera-trap images: splits, calibration, benchmarks, deployment.",
    )
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("ingest", help="label a dataset manifest as empty/nonempty")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="labeled CSV to write")
    p.add_argument("--require-bbox", action="store_true",
                   help="exclude nonempty images without bounding boxes")
    p.add_argument("--empty-category", action="append", default=None,
                   help="category treated as empty (repeatable; default: empty, blank)")
    p.add_argument("--season-map", default=None, help="CSV of image_id,season")
    p.add_argument("--summary-out", default=None)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("split", help="partition a labeled set")
    p.add_argument("--labels", required=True)
    p.add_argument("--assignment", required=True, help="CSV of key,partition")
    p.add_argument("--mode", choices=("location", "season"), required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--holdout", type=int, default=0,
                   help="move this many random train locations to val_dev")
    p.add_argument("--cap", type=int, default=1000,
                   help="per-location cap on empty items in train/val_dev (0 disables)")
    p.add_argument("--balance", action="store_true", help="balance train classes exactly")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("calibrate", help="pick the threshold for a target nonempty recall")
    p.add_argument("--scores", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--target-recall", type=float, default=0.96)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("eval", help="operating point, PR curve and PR-AUC for a run")
    p.add_argument("--scores", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--target-recall", type=float, default=0.96)
    p.add_argument("--out", required=True)
    p.add_argument("--curve-out", default=None, help="also write the PR curve CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="did run B degrade versus run A at the target recall?")
    p.add_argument("--scores", required=True, help="run A score file")
    p.add_argument("--scores-b", required=True, help="run B score file")
    p.add_argument("--labels", required=True)
    p.add_argument("--target-recall", type=float, default=0.96)
    p.add_argument("--margin", type=float, default=0.05,
                   help="TNR drop beyond this flags degradation")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("bench", help="latency/memory benchmark of a backend")
    p.add_argument("--backend", default=None, help=f"backend name (default ${BACKEND_ENV} or replay)")
    p.add_argument("--model", default=None, help="model artifact for runtime backends")
    p.add_argument("--runs", type=int, default=benchmod.DEFAULT_MEASURED_RUNS)
    p.add_argument("--warmup", type=int, default=benchmod.DEFAULT_WARMUP_RUNS)
    p.add_argument("--input", default=None, help="image file to benchmark on (default: zeros)")
    p.add_argument("--size", type=int, default=None)
    p.add_argument("--scale", choices=(filterpipe.SCALE_UNIT, filterpipe.SCALE_SYMMETRIC),
                   default=filterpipe.SCALE_SYMMETRIC)
    p.add_argument("--memory", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--replay-latencies", default=None, help="comma list of ms for the replay backend")
    p.add_argument("--replay-score", type=float, default=None)
    p.add_argument("--replay-sleep-ms", type=float, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("filter", help="keep/discard images through a backend")
    p.add_argument("images", nargs="*", help="image files (or use --watch)")
    p.add_argument("--backend", default=None)
    p.add_argument("--model", default=None)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--calibration", default=None, help="calibration JSON to take the threshold from")
    p.add_argument("--action", choices=filterpipe.ACTIONS, default=filterpipe.ACTION_MOVE)
    p.add_argument("--quarantine", default=None, help="directory for discarded files (move action)")
    p.add_argument("--patterns", default="*.jpg,*.jpeg,*.png")
    p.add_argument("--marker", action="store_true", help="write a .processed sidecar per file")
    p.add_argument("--watch", default=None, help="poll this directory instead of fixed paths")
    p.add_argument("--poll-interval", type=float, default=0.2)
    p.add_argument("--idle-timeout", type=float, default=None,
                   help="stop watching after this many idle seconds")
    p.add_argument("--size", type=int, default=None)
    p.add_argument("--scale", choices=(filterpipe.SCALE_UNIT, filterpipe.SCALE_SYMMETRIC),
                   default=filterpipe.SCALE_SYMMETRIC)
    p.add_argument("--replay-scores", default=None, help="JSON map path->score for the replay backend")
    p.add_argument("--replay-score", type=float, default=None)
    p.add_argument("--out", default=None, help="decision log (JSON Lines)")
    p.add_argument("--report-out", default=None, help="savings report JSON")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("simulate", help="project savings of a threshold over a labeled eval set")
    p.add_argument("--scores", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--target-recall", type=float, default=0.96)
    p.add_argument("--byte-sizes", default=None, help="CSV of image_id,bytes")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("plot", help="emit a deterministic SVG figure")
    p.add_argument("inputs", nargs="+",
                   help="curve CSVs (pr mode) or BENCH.json:EVAL.json pairs (latency-auc mode)")
    p.add_argument("--mode", choices=("pr", "latency-auc"), default="pr")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "func", None):
        parser.print_help()
        return 2
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ManifestParseError, IntegrityError, ValidationError, ConfigError, JoinError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (BackendError, UnsupportedFeatureError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except TrapsiftError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
