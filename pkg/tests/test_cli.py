import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from clustermatch.cli import main

SYNTH = ["synth", "--dim", "16", "--seen", "4", "--novel", "2",
         "--per-class", "30", "--seed", "5"]
FAST = ["--iters", "150"]


@pytest.fixture(scope="module")
def scenario_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("scenario")
    assert main(SYNTH + ["--out", str(out)]) == 0
    return out


def test_synth_writes_artifacts(scenario_dir):
    for name in ("source.cef", "target.cef", "truth.csv", "scenario.json", "run_config.json"):
        assert (scenario_dir / name).exists()


def test_discover_end_to_end(tmp_path, scenario_dir, capsys):
    out = tmp_path / "run"
    rc = main([
        "discover", "--source", str(scenario_dir / "source.cef"),
        "--target", str(scenario_dir / "target.cef"),
        "--num-target-classes", "6",
        "--truth", str(scenario_dir / "truth.csv"),
        "--out", str(out), *FAST,
    ])
    assert rc == 0
    line = capsys.readouterr().out.strip().splitlines()[-1]
    assert "h_score=" in line
    report = json.loads((out / "report.json").read_text())
    assert report["eval"]["h_score"] >= 0.9
    assert (out / "predictions.csv").exists()
    assert (out / "training_log.jsonl").read_text().count("\n") == 150
    assert (out / "run_config.json").exists()
    assert (out / "checkpoint" / "model.json").exists()
    echoed = json.loads((out / "run_config.json").read_text())
    assert echoed["config"]["iterations"] == 150
    assert "versions" in echoed


def test_discover_predictions_are_byte_identical_across_runs(tmp_path, scenario_dir):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        rc = main([
            "discover", "--source", str(scenario_dir / "source.cef"),
            "--target", str(scenario_dir / "target.cef"),
            "--num-target-classes", "6",
            "--out", str(out), *FAST, "--seed", "3",
        ])
        assert rc == 0
        outs.append((out / "predictions.csv").read_bytes())
    assert outs[0] == outs[1]


def test_discover_requires_k_or_estimate(scenario_dir, tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main([
            "discover", "--source", str(scenario_dir / "source.cef"),
            "--target", str(scenario_dir / "target.cef"),
            "--out", str(tmp_path / "x"),
        ])
    assert exc.value.code == 2


def test_discover_estimate_flags(tmp_path, scenario_dir, capsys):
    out = tmp_path / "est"
    rc = main([
        "discover", "--source", str(scenario_dir / "source.cef"),
        "--target", str(scenario_dir / "target.cef"),
        "--estimate", "--k-min", "4", "--k-max", "8",
        "--truth", str(scenario_dir / "truth.csv"),
        "--out", str(out), *FAST,
    ])
    assert rc == 0
    report = json.loads((out / "report.json").read_text())
    assert report["estimated_target_class_count"] in range(4, 9)


def test_eval_recomputes_identical_report(tmp_path, scenario_dir, capsys):
    run = tmp_path / "run"
    main([
        "discover", "--source", str(scenario_dir / "source.cef"),
        "--target", str(scenario_dir / "target.cef"),
        "--num-target-classes", "6",
        "--truth", str(scenario_dir / "truth.csv"),
        "--out", str(run), *FAST,
    ])
    evaldir = tmp_path / "eval"
    rc = main([
        "eval", "--pred", str(run / "predictions.csv"),
        "--truth", str(scenario_dir / "truth.csv"),
        "--seen-count", "4", "--out", str(evaldir),
    ])
    assert rc == 0
    from_run = json.loads((run / "report.json").read_text())["eval"]
    recomputed = json.loads((evaldir / "report.json").read_text())
    assert recomputed == from_run


def test_match_only_dumps_matrices(tmp_path, scenario_dir):
    out = tmp_path / "match"
    rc = main([
        "match-only", "--source", str(scenario_dir / "source.cef"),
        "--target", str(scenario_dir / "target.cef"),
        "--num-target-classes", "6", "--out", str(out),
    ])
    assert rc == 0
    dump = json.loads((out / "match.json").read_text())
    assert set(dump) == {
        "cooccurrence", "distribution", "matches",
        "unseen_prototype_indices", "class_to_prototypes",
    }
    gamma = np.asarray(dump["cooccurrence"])
    assert gamma.shape == (6, 4)
    assert gamma.sum() == 4 * 30


def test_baseline_simple_cli(tmp_path, scenario_dir, capsys):
    out = tmp_path / "simple"
    rc = main([
        "baseline-simple", "--source", str(scenario_dir / "source.cef"),
        "--target", str(scenario_dir / "target.cef"),
        "--num-target-classes", "6", "--entropy-threshold", "0.7",
        "--truth", str(scenario_dir / "truth.csv"),
        "--out", str(out), *FAST,
    ])
    assert rc == 0
    assert (out / "predictions.csv").exists()


def test_baseline_kmeans_cli(tmp_path, scenario_dir, capsys):
    out = tmp_path / "km"
    rc = main([
        "baseline-kmeans", "--target", str(scenario_dir / "target.cef"),
        "--k", "6", "--truth", str(scenario_dir / "truth.csv"), "--out", str(out),
    ])
    assert rc == 0
    assert "clustering_accuracy=" in capsys.readouterr().out


def test_estimate_k_cli(tmp_path, scenario_dir, capsys):
    rc = main([
        "estimate-k", "--source", str(scenario_dir / "source.cef"),
        "--target", str(scenario_dir / "target.cef"),
        "--k-min", "4", "--k-max", "8", "--out", str(tmp_path / "est"),
    ])
    assert rc == 0
    assert "estimated_target_class_count=" in capsys.readouterr().out


def test_runtime_error_exits_one(tmp_path, scenario_dir, capsys):
    bad = tmp_path / "bad.cef"
    bad.write_bytes(b"XXXX" + bytes(20))
    rc = main([
        "discover", "--source", str(bad),
        "--target", str(scenario_dir / "target.cef"),
        "--num-target-classes", "6", "--out", str(tmp_path / "x"),
    ])
    assert rc == 1
    assert "bad magic" in capsys.readouterr().err


def test_missing_input_exits_two(tmp_path, scenario_dir):
    with pytest.raises(SystemExit) as exc:
        main([
            "discover", "--source", str(tmp_path / "nope.cef"),
            "--target", str(scenario_dir / "target.cef"),
            "--num-target-classes", "6", "--out", str(tmp_path / "x"),
        ])
    assert exc.value.code == 2


def test_console_script_runs(tmp_path, scenario_dir):
    exe = shutil.which("clustermatch")
    cmd = [exe] if exe else [sys.executable, "-m", "clustermatch.cli"]
    proc = subprocess.run(
        cmd + ["synth", "--dim", "8", "--seen", "2", "--novel", "1",
               "--per-class", "5", "--seed", "1", "--out", str(tmp_path / "o")],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "o" / "source.cef").exists()
