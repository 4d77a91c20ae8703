"""End-to-end discovery pipelines and baselines.

`discover` is the cluster-then-match procedure: train seen prototypes,
cluster the target, match clusters to seen classes, assemble the combined
classifier, fine-tune, predict. `simple_baseline` is the match-then-cluster
alternative (entropy rejection, then clustering of rejects). `kmeans_baseline`
scores raw clustering. `estimate_num_classes` picks the cluster count from a
candidate grid.
"""

from __future__ import annotations

import dataclasses
import time
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .assignment import solve_assignment
from .data import ClassCatalog, DiscoveryConfig, EmbeddingSet, PredictionSet
from .evaluation import EvalReport, evaluate
from .finetune import DiscoveryModel, finetune, init_model, predict
from .kmeans import kmeans_fit, normalize_centroids
from .matching import (
    MatchResult,
    assemble_classifier,
    match,
    nearest_prototype,
    split_prototypes,
)
from .prototypes import PrototypeBank, row_softmax, train_seen_prototypes, target_prototypes

# Seed-stream tags (mixed with the config seed).
ESTIMATE_STREAM = 5
SIMPLE_STREAM = 6

D_HISTOGRAM_BINS = 10


class PipelineError(RuntimeError):
    """A pipeline stage failed; the message names the stage."""


@dataclass
class RunReport:
    """Everything a run wants to tell you besides the predictions."""

    config: DiscoveryConfig
    stages: list[tuple[str, float]] = field(default_factory=list)
    match_summary: dict | None = None
    training_log_path: str | None = None
    eval_report: EvalReport | None = None
    pre_finetune_eval: EvalReport | None = None
    estimated_target_class_count: int | None = None
    details: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "config": self.config.to_json_dict(),
            "stages": [{"name": n, "seconds": s} for n, s in self.stages],
            "match": self.match_summary,
            "training_log": self.training_log_path,
            "pre_finetune_eval": None
            if self.pre_finetune_eval is None
            else self.pre_finetune_eval.to_json_dict(),
            "eval": None if self.eval_report is None else self.eval_report.to_json_dict(),
            "estimated_target_class_count": self.estimated_target_class_count,
            "details": self.details,
        }


@contextmanager
def _stage(report: RunReport, name: str):
    start = time.perf_counter()
    try:
        yield
    except Exception as exc:
        raise PipelineError(f"stage {name!r} failed: {exc}") from exc
    report.stages.append((name, time.perf_counter() - start))


def _match_summary(result: MatchResult, target_proto_count: int) -> dict:
    counts, edges = np.histogram(
        result.distribution, bins=D_HISTOGRAM_BINS, range=(0.0, 1.0)
    )
    return {
        "target_prototype_count": target_proto_count,
        "matched_prototype_count": target_proto_count - len(result.unseen_prototype_indices),
        "unseen_prototype_count": len(result.unseen_prototype_indices),
        "unseen_prototype_indices": list(result.unseen_prototype_indices),
        "class_to_prototypes": {str(c): list(p) for c, p in result.class_to_prototypes.items()},
        "distribution_histogram": {
            "bin_edges": edges.tolist(),
            "counts": counts.tolist(),
        },
    }


def _predictions(model: DiscoveryModel, target: EmbeddingSet) -> PredictionSet:
    probs = predict(model, target)
    return PredictionSet(probs.argmax(axis=1), probs.max(axis=1))


def discover(
    source: EmbeddingSet,
    target: EmbeddingSet,
    target_class_count,
    config: DiscoveryConfig,
    *,
    k_grid=None,
    estimate_mode: str = "union",
    truth=None,
    log_fn=None,
    log_path_label: str | None = None,
) -> tuple[PredictionSet, RunReport, DiscoveryModel]:
    """Run the full cluster-then-match discovery procedure.

    `target_class_count` is the number of target classes, or the string
    "estimate" (requires `k_grid`). When `truth` labels are given, the report
    carries evaluations of both the assembled (pre-fine-tune) and final model.
    """
    report = RunReport(config=config, training_log_path=log_path_label)
    if target.count == 0:
        raise PipelineError("stage 'cluster' failed: target set is empty")

    k = target_class_count
    if isinstance(k, str):
        if k != "estimate":
            raise ValueError(f"target_class_count must be an integer or 'estimate', got {k!r}")
        if k_grid is None:
            raise ValueError("estimating the class count requires k_grid")
        with _stage(report, "estimate"):
            k = estimate_num_classes(source, target, k_grid, config, mode=estimate_mode)
        report.estimated_target_class_count = int(k)
    k = int(k)

    with _stage(report, "cluster"):
        w_seen = train_seen_prototypes(source, config)
        protos = target_prototypes(target, k, config)

    with _stage(report, "match"):
        result = match(source, protos, config.tau)
        _, w_unseen = split_prototypes(protos, result.matches)
        classifier = assemble_classifier(w_seen, w_unseen)
        report.match_summary = _match_summary(result, protos.count)

    catalog = ClassCatalog(seen_count=w_seen.count, target_count=k)
    model = init_model(classifier, w_seen.count, config)
    if truth is not None:
        report.pre_finetune_eval = evaluate(_predictions(model, target), truth, catalog)

    with _stage(report, "finetune"):
        model = finetune(model, source, target, config, log_fn=log_fn)

    with _stage(report, "eval"):
        predictions = _predictions(model, target)
        if truth is not None:
            report.eval_report = evaluate(predictions, truth, catalog)
    return predictions, report, model


def prediction_entropy(probs: np.ndarray) -> np.ndarray:
    """Shannon entropy (natural log) of each probability row."""
    safe = np.where(probs > 0.0, probs, 1.0)
    return -(probs * np.log(safe)).sum(axis=1)


def simple_baseline(
    source: EmbeddingSet,
    target: EmbeddingSet,
    target_class_count: int,
    config: DiscoveryConfig,
    entropy_threshold: float,
    *,
    truth=None,
    log_fn=None,
) -> tuple[PredictionSet, RunReport]:
    """Match-then-cluster baseline with an entropy rejection threshold.

    Target samples whose seen-classifier prediction entropy exceeds the
    threshold are treated as unseen and clustered with
    k = target_class_count - seen_count; cluster centroids initialize the
    unseen columns, then the same combined objective fine-tunes the
    classifier with the feature space frozen (no adapter).
    """
    if source.labels is None:
        raise ValueError("source set must be labeled")
    seen = int(source.labels.max()) + 1
    if target_class_count <= seen:
        raise ValueError(
            f"target_class_count {target_class_count} must exceed seen count {seen}"
        )
    max_entropy = float(np.log(seen))
    if not 0.0 < entropy_threshold <= max_entropy:
        raise ValueError(
            f"entropy threshold must lie in (0, ln {seen}] = (0, {max_entropy:.4f}], "
            f"got {entropy_threshold}"
        )

    report = RunReport(config=config)
    with _stage(report, "train-head"):
        w_seen = train_seen_prototypes(source, config)

    with _stage(report, "entropy-split"):
        probs = row_softmax(target.vectors.astype(np.float64) @ w_seen.columns / config.temperature)
        rejected = np.flatnonzero(prediction_entropy(probs) > entropy_threshold)

    with _stage(report, "cluster-rejected"):
        k_unseen = min(target_class_count - seen, rejected.size)
        if k_unseen > 0:
            subset = EmbeddingSet(target.vectors[rejected])
            result = kmeans_fit(
                subset,
                k_unseen,
                seed=[config.seed, SIMPLE_STREAM],
                max_iter=config.kmeans_max_iter,
                tol=config.kmeans_tol,
            )
            w_unseen = normalize_centroids(result, kind="unseen")
        else:
            w_unseen = PrototypeBank(np.zeros((w_seen.dim, 0)), kind="unseen")
        report.details = {
            "rejected_count": int(rejected.size),
            "unseen_cluster_count": int(k_unseen),
            "entropy_threshold": float(entropy_threshold),
        }

    frozen_config = dataclasses.replace(config, adapter_kind="none")
    model = init_model(assemble_classifier(w_seen, w_unseen), seen, frozen_config)
    with _stage(report, "finetune"):
        model = finetune(model, source, target, frozen_config, log_fn=log_fn)

    with _stage(report, "eval"):
        predictions = _predictions(model, target)
        if truth is not None:
            catalog = ClassCatalog(seen_count=seen, target_count=target_class_count)
            report.eval_report = evaluate(predictions, truth, catalog)
    return predictions, report


def sweep_entropy_thresholds(
    source, target, target_class_count, config, thresholds, *, truth=None
):
    """Run the simple baseline once per threshold; selection is the caller's job."""
    runs = []
    for threshold in thresholds:
        pred, report = simple_baseline(
            source, target, target_class_count, config, float(threshold), truth=truth
        )
        runs.append((float(threshold), pred, report))
    return runs


@dataclass(frozen=True)
class ClusteringReport:
    """Hungarian-matched clustering accuracy, with no seen-id semantics."""

    accuracy: float
    hungarian_map: tuple[tuple[int, int], ...]
    cluster_count: int

    def to_json_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "hungarian_map": [list(p) for p in self.hungarian_map],
            "cluster_count": self.cluster_count,
        }


def kmeans_baseline(
    target: EmbeddingSet, k: int, truth_labels, config: DiscoveryConfig
) -> ClusteringReport:
    """Cluster the target and score best one-to-one cluster/class agreement."""
    truth = np.asarray(truth_labels, dtype=np.int64)
    if truth.shape[0] != target.count:
        raise ValueError("truth length does not match target count")
    result = kmeans_fit(
        target, k, seed=[config.seed, 1], max_iter=config.kmeans_max_iter, tol=config.kmeans_tol
    )
    classes = np.unique(truth)
    contingency = np.zeros((k, classes.size), dtype=np.float64)
    class_index = {int(c): j for j, c in enumerate(classes)}
    for cluster, cls in zip(result.assignments, truth):
        contingency[int(cluster), class_index[int(cls)]] += 1
    best = solve_assignment(contingency, maximize=True)
    pairs = tuple(sorted((int(r), int(classes[c])) for r, c in best.mapping))
    return ClusteringReport(float(best.total_cost / target.count), pairs, k)


def _simplified_silhouette(x: np.ndarray, centroids: np.ndarray, assign: np.ndarray) -> float:
    """Mean simplified silhouette: (b - a) / max(a, b) on centroid distances."""
    from .kmeans import _sq_distances

    d = np.sqrt(_sq_distances(x, centroids))
    rows = np.arange(x.shape[0])
    a = d[rows, assign]
    d[rows, assign] = np.inf
    b = d.min(axis=1)
    return float(np.mean((b - a) / np.maximum(a, b)))


def _union_score(source, union_set, k, config) -> float:
    """Hungarian cluster accuracy of the source subset of a union clustering,
    plus the simplified silhouette of the target subset.

    Source-side accuracy alone saturates once every source class is pure (a
    clustering may merge all novel structure at no cost), so the unsupervised
    silhouette term supplies the signal about target-only classes.
    """
    result = kmeans_fit(
        union_set,
        k,
        seed=[config.seed, ESTIMATE_STREAM],
        max_iter=config.kmeans_max_iter,
        tol=config.kmeans_tol,
    )
    seen = int(source.labels.max()) + 1
    contingency = np.zeros((k, seen), dtype=np.float64)
    for cluster, cls in zip(result.assignments[: source.count], source.labels):
        contingency[int(cluster), int(cls)] += 1
    accuracy = float(solve_assignment(contingency, maximize=True).total_cost / source.count)
    target_x = union_set.vectors[source.count :].astype(np.float64)
    silhouette = _simplified_silhouette(
        target_x, result.centroids, result.assignments[source.count :]
    )
    return accuracy + silhouette


def _target_only_score(source, target, k, config) -> float:
    """Fraction of source samples whose nearest prototype matches their class."""
    from .matching import co_occurrence, column_softmax, threshold_match

    result = kmeans_fit(
        target,
        k,
        seed=[config.seed, ESTIMATE_STREAM],
        max_iter=config.kmeans_max_iter,
        tol=config.kmeans_tol,
    )
    protos = normalize_centroids(result, kind="target")
    m = threshold_match(column_softmax(co_occurrence(source, protos)), config.tau)
    nearest = nearest_prototype(source.vectors, protos)
    return float((m[nearest, source.labels] == 1).mean())


def estimate_num_classes(
    source: EmbeddingSet,
    target: EmbeddingSet,
    k_grid,
    config: DiscoveryConfig,
    mode: str = "union",
) -> int:
    """Pick the cluster count from a grid; ties go to the smallest k.

    Default ("union") clusters source+target together and scores Hungarian
    cluster accuracy on the labeled source subset. "target-only" clusters
    the target alone and scores how many source samples sit nearest to a
    prototype matched to their own class.
    """
    if source.labels is None:
        raise ValueError("source set must be labeled")
    grid = [int(k) for k in k_grid]
    if not grid:
        raise ValueError("k_grid is empty")
    for k in grid:
        if not 1 <= k <= target.count:
            raise ValueError(f"candidate k={k} outside [1, {target.count}]")
    if mode not in ("union", "target-only"):
        raise ValueError(f"mode must be 'union' or 'target-only', got {mode!r}")

    union_set = None
    if mode == "union":
        union_set = EmbeddingSet(
            np.vstack([source.vectors, target.vectors]).astype(np.float32)
        )
    best_k, best_score = None, -1.0
    for k in sorted(grid):
        if mode == "union":
            score = _union_score(source, union_set, k, config)
        else:
            score = _target_only_score(source, target, k, config)
        if score > best_score:
            best_k, best_score = k, score
    return int(best_k)
