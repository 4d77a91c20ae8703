"""Command-line interface.

Subcommands: synth, discover, baseline-simple, baseline-kmeans, estimate-k,
match-only, eval. Every run writes run_config.json (config echo + versions)
into the output directory; exit code 0 on success, 2 on usage errors, 1 on
runtime errors with the failing stage named.
"""

from __future__ import annotations

import argparse
import csv
import json
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    ClassCatalog,
    ConfigError,
    FormatError,
    PredictionSet,
    load_config,
    load_embeddings,
)
from .evaluation import evaluate
from .finetune import save_model
from .matching import match
from .pipeline import (
    PipelineError,
    discover,
    estimate_num_classes,
    kmeans_baseline,
    simple_baseline,
)
from .prototypes import train_seen_prototypes, target_prototypes
from .synthgen import PRESETS, Scenario, write_scenario


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, default=None, help="JSON config file")
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--temperature", type=float, default=None)
    p.add_argument("--iters", dest="iterations", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--lr-head", type=float, default=None)
    p.add_argument("--lr-adapter", type=float, default=None)
    p.add_argument("--adapter", choices=["none", "linear"], default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--kmeans-max-iter", type=int, default=None)
    p.add_argument("--kmeans-tol", type=float, default=None)


def _config_from_args(args) -> "DiscoveryConfig":
    overrides = {
        "tau": args.tau,
        "lambda": args.lam,
        "temperature": args.temperature,
        "iterations": args.iterations,
        "batch_size": args.batch_size,
        "lr_head": args.lr_head,
        "lr_adapter": args.lr_adapter,
        "seed": args.seed,
        "kmeans_max_iter": args.kmeans_max_iter,
        "kmeans_tol": args.kmeans_tol,
    }
    if args.adapter is not None:
        overrides["adapter_kind"] = "linear-residual" if args.adapter == "linear" else "none"
    return load_config(args.config, overrides)


def _write_run_config(outdir: Path, subcommand: str, config=None, extra=None) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    payload = {
        "subcommand": subcommand,
        "config": None if config is None else config.to_json_dict(),
        "versions": {
            "clustermatch": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
    }
    if extra:
        payload.update(extra)
    (outdir / "run_config.json").write_text(json.dumps(payload, indent=2) + "\n")


def _write_predictions(path: Path, pred: PredictionSet) -> None:
    lines = ["sample_index,class_id,confidence"]
    lines += [
        f"{i},{int(c)},{float(conf)!r}"
        for i, (c, conf) in enumerate(zip(pred.assignments, pred.confidences))
    ]
    path.write_text("\n".join(lines) + "\n")


def _read_predictions(path: Path) -> PredictionSet:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        ids, confs = [], []
        for row in reader:
            ids.append(int(row["class_id"]))
            confs.append(float(row["confidence"]))
    return PredictionSet(np.asarray(ids, dtype=np.int64), np.asarray(confs))


def _read_truth(path: Path) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "label" not in reader.fieldnames:
            raise FormatError(f"{path}: expected a CSV with a 'label' column")
        return np.asarray([int(row["label"]) for row in reader], dtype=np.int64)


def _require_inputs(parser, *paths) -> None:
    for p in paths:
        if p is not None and not Path(p).exists():
            parser.error(f"input file not found: {p}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clustermatch",
        description="Open-world discovery on precomputed embedding sets.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scenario")
    p.add_argument("--preset", choices=sorted(PRESETS), default=None)
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--seen", type=int, default=None)
    p.add_argument("--novel", type=int, default=None)
    p.add_argument("--per-class", type=int, default=None)
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--shift-deg", type=float, default=None)
    p.add_argument("--source-private", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("discover", help="run the cluster-then-match pipeline")
    p.add_argument("--source", type=Path, required=True)
    p.add_argument("--target", type=Path, required=True)
    p.add_argument("--num-target-classes", type=int, default=None)
    p.add_argument("--estimate", action="store_true")
    p.add_argument("--k-min", type=int, default=None)
    p.add_argument("--k-max", type=int, default=None)
    p.add_argument("--estimate-mode", choices=["union", "target-only"], default="union")
    p.add_argument("--truth", type=Path, default=None)
    p.add_argument("--out", type=Path, required=True)
    _add_config_flags(p)

    p = sub.add_parser("baseline-simple", help="entropy-threshold match-then-cluster baseline")
    p.add_argument("--source", type=Path, required=True)
    p.add_argument("--target", type=Path, required=True)
    p.add_argument("--num-target-classes", type=int, required=True)
    p.add_argument("--entropy-threshold", type=float, required=True)
    p.add_argument("--truth", type=Path, default=None)
    p.add_argument("--out", type=Path, required=True)
    _add_config_flags(p)

    p = sub.add_parser("baseline-kmeans", help="raw clustering accuracy baseline")
    p.add_argument("--target", type=Path, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--truth", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    _add_config_flags(p)

    p = sub.add_parser("estimate-k", help="estimate the number of target classes")
    p.add_argument("--source", type=Path, required=True)
    p.add_argument("--target", type=Path, required=True)
    p.add_argument("--k-min", type=int, required=True)
    p.add_argument("--k-max", type=int, required=True)
    p.add_argument("--mode", choices=["union", "target-only"], default="union")
    p.add_argument("--out", type=Path, default=None)
    _add_config_flags(p)

    p = sub.add_parser("match-only", help="dump the matching matrices as JSON")
    p.add_argument("--source", type=Path, required=True)
    p.add_argument("--target", type=Path, required=True)
    p.add_argument("--num-target-classes", type=int, required=True)
    p.add_argument("--out", type=Path, required=True)
    _add_config_flags(p)

    p = sub.add_parser("eval", help="recompute metrics from a predictions file")
    p.add_argument("--pred", type=Path, required=True)
    p.add_argument("--truth", type=Path, required=True)
    p.add_argument("--seen-count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)  # recorded for uniformity; eval is rng-free
    p.add_argument("--out", type=Path, default=None)
    return parser


def _cmd_synth(args, parser) -> int:
    if args.preset is not None:
        scenario = PRESETS[args.preset]
        if args.seed is not None:
            import dataclasses

            scenario = dataclasses.replace(scenario, seed=args.seed)
    else:
        custom = {
            "dim": args.dim,
            "seen_count": args.seen,
            "novel_count": args.novel,
            "samples_per_class": args.per_class,
            "noise_sigma": args.sigma,
            "shift_angle_degrees": args.shift_deg,
            "source_private_count": args.source_private,
            "seed": args.seed,
        }
        scenario = Scenario(**{k: v for k, v in custom.items() if v is not None})
    write_scenario(scenario, args.out)
    _write_run_config(args.out, "synth", extra={"scenario": scenario.to_json_dict()})
    print(
        f"wrote scenario seed={scenario.seed} "
        f"({scenario.seen_count} seen + {scenario.novel_count} novel classes) to {args.out}"
    )
    return 0


def _summary_line(report) -> str:
    ev = report.eval_report
    if ev is None:
        m = report.match_summary or {}
        return (
            f"matched={m.get('matched_prototype_count')} "
            f"unseen={m.get('unseen_prototype_count')} (no truth labels given)"
        )
    parts = []
    if ev.h_score is not None:
        parts.append(f"h_score={ev.h_score:.4f}")
    if ev.seen_accuracy is not None:
        parts.append(f"seen={ev.seen_accuracy:.4f}")
    if ev.unseen_accuracy is not None:
        parts.append(f"unseen={ev.unseen_accuracy:.4f}")
    return " ".join(parts) if parts else "no metrics applicable"


def _cmd_discover(args, parser) -> int:
    if args.estimate == (args.num_target_classes is not None):
        parser.error("exactly one of --num-target-classes or --estimate is required")
    if args.estimate and (args.k_min is None or args.k_max is None):
        parser.error("--estimate requires --k-min and --k-max")
    _require_inputs(parser, args.source, args.target, args.truth)
    config = _config_from_args(args)
    source = load_embeddings(args.source)
    target = load_embeddings(args.target)
    truth = _read_truth(args.truth) if args.truth else None

    outdir = args.out
    _write_run_config(outdir, "discover", config)
    log_file = open(outdir / "training_log.jsonl", "w")
    log = lambda step, ls, lr, total: log_file.write(
        json.dumps(
            {"step": step, "loss_supervised": ls, "loss_reg": lr, "total": total}
        )
        + "\n"
    )
    try:
        k = "estimate" if args.estimate else args.num_target_classes
        k_grid = range(args.k_min, args.k_max + 1) if args.estimate else None
        predictions, report, model = discover(
            source,
            target,
            k,
            config,
            k_grid=k_grid,
            estimate_mode=args.estimate_mode,
            truth=truth,
            log_fn=log,
            log_path_label="training_log.jsonl",
        )
    finally:
        log_file.close()
    _write_predictions(outdir / "predictions.csv", predictions)
    (outdir / "report.json").write_text(json.dumps(report.to_json_dict(), indent=2) + "\n")
    save_model(model, outdir / "checkpoint")
    print(_summary_line(report))
    return 0


def _cmd_baseline_simple(args, parser) -> int:
    _require_inputs(parser, args.source, args.target, args.truth)
    config = _config_from_args(args)
    source = load_embeddings(args.source)
    target = load_embeddings(args.target)
    truth = _read_truth(args.truth) if args.truth else None
    outdir = args.out
    _write_run_config(outdir, "baseline-simple", config)
    predictions, report = simple_baseline(
        source,
        target,
        args.num_target_classes,
        config,
        args.entropy_threshold,
        truth=truth,
    )
    _write_predictions(outdir / "predictions.csv", predictions)
    (outdir / "report.json").write_text(json.dumps(report.to_json_dict(), indent=2) + "\n")
    print(_summary_line(report))
    return 0


def _cmd_baseline_kmeans(args, parser) -> int:
    _require_inputs(parser, args.target, args.truth)
    config = _config_from_args(args)
    target = load_embeddings(args.target)
    truth = _read_truth(args.truth)
    outdir = args.out
    _write_run_config(outdir, "baseline-kmeans", config)
    report = kmeans_baseline(target, args.k, truth, config)
    (outdir / "report.json").write_text(json.dumps(report.to_json_dict(), indent=2) + "\n")
    print(f"clustering_accuracy={report.accuracy:.4f} k={report.cluster_count}")
    return 0


def _cmd_estimate_k(args, parser) -> int:
    _require_inputs(parser, args.source, args.target)
    config = _config_from_args(args)
    source = load_embeddings(args.source)
    target = load_embeddings(args.target)
    estimate = estimate_num_classes(
        source, target, range(args.k_min, args.k_max + 1), config, mode=args.mode
    )
    if args.out is not None:
        _write_run_config(args.out, "estimate-k", config)
        (args.out / "estimate.json").write_text(
            json.dumps({"estimated_target_class_count": estimate, "mode": args.mode}) + "\n"
        )
    print(f"estimated_target_class_count={estimate}")
    return 0


def _cmd_match_only(args, parser) -> int:
    _require_inputs(parser, args.source, args.target)
    config = _config_from_args(args)
    source = load_embeddings(args.source)
    target = load_embeddings(args.target)
    outdir = args.out
    _write_run_config(outdir, "match-only", config)
    protos = target_prototypes(target, args.num_target_classes, config)
    train_seen_prototypes(source, config)  # validates the source labeling
    result = match(source, protos, config.tau)
    (outdir / "match.json").write_text(json.dumps(result.to_json_dict(), indent=2) + "\n")
    print(
        f"matched={protos.count - len(result.unseen_prototype_indices)} "
        f"unseen={len(result.unseen_prototype_indices)}"
    )
    return 0


def _cmd_eval(args, parser) -> int:
    _require_inputs(parser, args.pred, args.truth)
    pred = _read_predictions(args.pred)
    truth = _read_truth(args.truth)
    report = evaluate(pred, truth, ClassCatalog(seen_count=args.seen_count))
    payload = report.to_json_dict()
    if args.out is not None:
        _write_run_config(args.out, "eval", extra={"seed": args.seed})
        (args.out / "report.json").write_text(json.dumps(payload, indent=2) + "\n")
    parts = []
    if report.h_score is not None:
        parts.append(f"h_score={report.h_score:.4f}")
    if report.seen_accuracy is not None:
        parts.append(f"seen={report.seen_accuracy:.4f}")
    if report.unseen_accuracy is not None:
        parts.append(f"unseen={report.unseen_accuracy:.4f}")
    print(" ".join(parts) if parts else "no metrics applicable")
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "discover": _cmd_discover,
    "baseline-simple": _cmd_baseline_simple,
    "baseline-kmeans": _cmd_baseline_kmeans,
    "estimate-k": _cmd_estimate_k,
    "match-only": _cmd_match_only,
    "eval": _cmd_eval,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.subcommand](args, parser)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FormatError, ConfigError, ValueError, OSError) as exc:
        print(f"error in {args.subcommand}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
