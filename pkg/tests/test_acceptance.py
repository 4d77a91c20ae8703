"""Acceptance suite: one test per project acceptance criterion.

Run with `pytest tests/test_acceptance.py -v -s` to get one explicit
PASS line per criterion (pytest -v itself gives one pass/fail line each).
"""

import dataclasses
import itertools

import numpy as np
import pytest

from clustermatch.assignment import solve_assignment
from clustermatch.data import DiscoveryConfig, EmbeddingSet
from clustermatch.evaluation import h_score
from clustermatch.finetune import gradient_check, init_model
from clustermatch.matching import column_softmax, threshold_match
from clustermatch.pipeline import (
    discover,
    estimate_num_classes,
    kmeans_baseline,
    sweep_entropy_thresholds,
)
from clustermatch.prototypes import PrototypeBank
from clustermatch.synthgen import PRESETS, Scenario, generate

CONFIG = DiscoveryConfig()


def ok(criterion: str, detail: str):
    print(f"PASS {criterion}: {detail}")


@pytest.fixture(scope="module")
def s1():
    return generate(PRESETS["s1"])


@pytest.fixture(scope="module")
def s1_run(s1):
    src, tgt, truth = s1
    return discover(src, tgt, 15, CONFIG, truth=truth)


@pytest.fixture(scope="module")
def s2():
    return generate(PRESETS["s2"])


def test_criterion_01_h_score_arithmetic():
    value = h_score(0.770, 0.628)
    assert value == pytest.approx(0.692, abs=5e-4)
    ok("criterion 1", f"h_score(0.770, 0.628) = {value:.6f} = 0.692 +/- 5e-4")


def test_criterion_02_matching_core_properties():
    rng = np.random.default_rng(2024)
    tau = CONFIG.tau
    for _ in range(120):
        k = int(rng.integers(1, 12))
        classes = int(rng.integers(1, 8))
        gamma = rng.integers(0, 500, (k, classes))
        dist = column_softmax(gamma)
        assert np.abs(dist.sum(axis=0) - 1.0).max() <= 1e-6
        matches = threshold_match(dist, tau)
        assert np.array_equal(matches, (dist >= tau).astype(matches.dtype))
        unseen = np.flatnonzero(matches.sum(axis=1) == 0)
        assert set(unseen.tolist()) == {
            i for i in range(k) if not matches[i].any()
        }
        perm = rng.permutation(k)
        assert np.allclose(column_softmax(gamma[perm]), dist[perm], atol=1e-15)
        permuted_unseen = np.flatnonzero(
            threshold_match(column_softmax(gamma[perm]), tau).sum(axis=1) == 0
        )
        assert set(permuted_unseen.tolist()) == {
            int(np.argwhere(perm == u)[0, 0]) for u in unseen
        }
    ok("criterion 2", "120 random count matrices satisfy all matching-core properties")


def test_criterion_03_overclustering_and_underclustering_pattern():
    scenario = Scenario(dim=32, seen_count=4, novel_count=2, samples_per_class=150,
                        noise_sigma=0.04, shift_angle_degrees=5.0,
                        bimodal_classes=(0,), overlap_pairs=((1, 2),), seed=7)
    src, tgt, truth = generate(scenario)
    _, report, _ = discover(src, tgt, 6, CONFIG, truth=truth)
    c2p = report.match_summary["class_to_prototypes"]
    multi = [c for c, protos in c2p.items() if len(protos) >= 2]
    assert "0" in multi, f"bimodal class not multi-matched: {c2p}"
    assert set(c2p["1"]) & set(c2p["2"]), f"overlapping classes not shared: {c2p}"
    assert report.match_summary["unseen_prototype_count"] == 2
    ok(
        "criterion 3",
        f"class 0 -> prototypes {c2p['0']}, classes 1 and 2 share {set(c2p['1']) & set(c2p['2'])}, "
        f"2 prototypes unseen",
    )


def test_criterion_04_hungarian_matches_brute_force():
    rng = np.random.default_rng(404)
    for _ in range(120):
        r = int(rng.integers(1, 8))
        c = int(rng.integers(1, 8))
        cost = rng.uniform(-10, 10, (r, c))
        got = solve_assignment(cost).total_cost
        best = np.inf
        if r <= c:
            for perm in itertools.permutations(range(c), r):
                best = min(best, sum(cost[i, j] for i, j in enumerate(perm)))
        else:
            for perm in itertools.permutations(range(r), c):
                best = min(best, sum(cost[i, j] for j, i in enumerate(perm)))
        assert got == pytest.approx(best, abs=1e-9)
    ok("criterion 4", "120 random cost matrices up to 7x7 match the permutation oracle")


def test_criterion_05_gradient_correctness():
    rng = np.random.default_rng(505)
    worst = 0.0
    for trial in range(10):
        d = int(rng.integers(4, 9))
        cs = int(rng.integers(2, 5))
        cu = int(rng.integers(0, 3))
        cols = rng.standard_normal((d, cs + cu))
        cols /= np.linalg.norm(cols, axis=0, keepdims=True)
        cfg = dataclasses.replace(
            CONFIG,
            adapter_kind="linear-residual" if trial % 2 == 0 else "none",
            temperature=float(rng.uniform(0.05, 0.5)),
        )
        model = init_model(PrototypeBank(cols, kind="combined"), cs, cfg)
        if model.adapter.weights is not None:
            model.adapter.weights += 0.05 * rng.standard_normal((d, d))
        vs = rng.standard_normal((6, d))
        vs /= np.linalg.norm(vs, axis=1, keepdims=True)
        vt = rng.standard_normal((7, d))
        vt /= np.linalg.norm(vt, axis=1, keepdims=True)
        batch_s = EmbeddingSet(vs.astype(np.float32), rng.integers(0, cs, 6))
        batch_t = EmbeddingSet(vt.astype(np.float32))
        worst = max(worst, gradient_check(model, batch_s, batch_t))
    assert worst < 1e-4
    ok("criterion 5", f"max relative gradient error over 10 models = {worst:.3g} < 1e-4")


def test_criterion_06_end_to_end_discovery(s1_run):
    _, report, _ = s1_run
    final = report.eval_report.h_score
    before = report.pre_finetune_eval.h_score
    assert final >= 0.95
    assert final >= before - 0.02
    ok("criterion 6", f"S1 H-score = {final:.4f} >= 0.95, finetuned >= {before:.4f} - 0.02")


def test_criterion_07_baseline_ordering(s2):
    src, tgt, truth = s2
    _, report, _ = discover(src, tgt, 15, CONFIG, truth=truth)
    ours = report.eval_report.h_score

    grid = [f * np.log(10) for f in (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)]
    runs = sweep_entropy_thresholds(src, tgt, 15, CONFIG, grid, truth=truth)
    simple_best = max(r.eval_report.h_score for _, _, r in runs)
    assert ours >= simple_best, f"{ours} < simple {simple_best}"

    km = kmeans_baseline(tgt, 15, truth, CONFIG)
    assert ours >= km.accuracy, f"{ours} < kmeans {km.accuracy}"
    ok(
        "criterion 7",
        f"S2: discover {ours:.4f} >= simple-best {simple_best:.4f} "
        f"and >= kmeans {km.accuracy:.4f}",
    )


def test_criterion_08_threshold_robustness(s1, s1_run):
    src, tgt, truth = s1
    scores = {0.3: s1_run[1].eval_report.h_score}
    for tau in (0.15, 0.45):
        _, report, _ = discover(src, tgt, 15, dataclasses.replace(CONFIG, tau=tau), truth=truth)
        scores[tau] = report.eval_report.h_score
    spread = max(scores.values()) - min(scores.values())
    assert spread < 0.03
    ok("criterion 8", f"H across tau {sorted(scores)} varies by {spread:.4f} < 0.03")


def test_criterion_09_class_count_estimation(s1, s1_run):
    src, tgt, truth = s1
    estimate = estimate_num_classes(src, tgt, range(10, 26), CONFIG)
    assert abs(estimate - 15) <= 2
    _, report, _ = discover(src, tgt, estimate, CONFIG, truth=truth)
    known = s1_run[1].eval_report.h_score
    estimated = report.eval_report.h_score
    assert estimated > known - 0.05
    ok(
        "criterion 9",
        f"estimated k = {estimate} (true 15 +/- 2); H {estimated:.4f} vs known-k {known:.4f}",
    )


def test_criterion_10_split_shape_coverage():
    src, tgt, truth = generate(PRESETS["s1-closed"])
    _, report, _ = discover(src, tgt, 10, CONFIG, truth=truth)
    assert report.eval_report.seen_accuracy >= 0.95
    assert report.match_summary["unseen_prototype_count"] <= 1
    closed_seen = report.eval_report.seen_accuracy
    spurious = report.match_summary["unseen_prototype_count"]

    src, tgt, truth = generate(PRESETS["s1-open-partial"])
    _, report, _ = discover(src, tgt, 12, CONFIG, truth=truth)
    assert report.eval_report.h_score >= 0.90
    ok(
        "criterion 10",
        f"closed: seen {closed_seen:.4f} with {spurious} spurious unseen prototypes; "
        f"open-partial: H {report.eval_report.h_score:.4f} >= 0.90",
    )


def test_criterion_11_determinism(s1, s1_run):
    src, tgt, truth = s1
    first, _, _ = s1_run
    again, _, _ = discover(src, tgt, 15, CONFIG, truth=truth)

    def prediction_bytes(pred):
        lines = ["sample_index,class_id,confidence"]
        lines += [
            f"{i},{int(c)},{float(conf)!r}"
            for i, (c, conf) in enumerate(zip(pred.assignments, pred.confidences))
        ]
        return "\n".join(lines).encode()

    assert prediction_bytes(first) == prediction_bytes(again)
    ok("criterion 11", "repeated S1 runs produce byte-identical prediction files")
