import json
import subprocess
import sys

import pytest

from perceval.cli import main
from perceval.core import FrameKey, FrameSet, read_frameset, write_frameset
from perceval.dataops import write_points


@pytest.fixture(scope="module")
def scene(tmp_path_factory):
    root = tmp_path_factory.mktemp("scene")
    spec = {"seed": 3, "num_logs": 1, "frames_per_log": 4, "agents_per_log": 6,
            "models": [{"model_id": "a", "center_sigma": 0.3}, {"model_id": "b", "center_sigma": 0.3}]}
    (root / "spec.json").write_text(json.dumps(spec))
    assert main(["synth", "--spec", str(root / "spec.json"), "--out-dir", str(root / "s")]) == 0
    return root / "s"


def test_synth_writes_expected_files(scene):
    names = {p.name for p in scene.iterdir()}
    for name in ("gt_tracks.jsonl", "gt_futures.jsonl", "gt_detections.jsonl", "a_forecasts.jsonl",
                 "a_tracks.jsonl", "b_detections.jsonl", "manifest.json", "manifest_detections.json", "spec.json"):
        assert name in names
    assert not any(n.endswith(".tmp") for n in names)


@pytest.mark.parametrize("task, gt, pred, columns", [
    ("detection", "gt_detections.jsonl", "a_detections.jsonl", ["mCDS", "mAP", "mATE", "mASE", "mAOE"]),
    ("tracking", "gt_tracks.jsonl", "a_tracks.jsonl", ["HOTA", "AMOTA", "MOTA"]),
    ("forecasting", "gt_futures.jsonl", "a_forecasts.jsonl", ["mAP_F", "ADE", "FDE"]),
])
def test_evaluate_prints_table_and_writes_report(scene, tmp_path, capsys, task, gt, pred, columns):
    out = tmp_path / "r.json"
    code = main(["evaluate", task, "--gt", str(scene / gt), "--pred", str(scene / pred), "--out", str(out)])
    assert code == 0
    captured = capsys.readouterr()
    assert captured.out.split("\n")[0].split() == columns
    report = json.loads(out.read_text())
    assert set(columns) <= set(report["means"])
    summary = json.loads(captured.err.strip().splitlines()[-1])
    assert summary["exit_code"] == 0 and "wall_clock_seconds" in summary


def test_evaluate_config_overrides(scene, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"distance_thresholds": [4.0]}))
    out = tmp_path / "r.json"
    args = ["evaluate", "detection", "--gt", str(scene / "gt_detections.jsonl"),
            "--pred", str(scene / "a_detections.jsonl"), "--config", str(cfg), "--out", str(out)]
    assert main(args) == 0
    assert json.loads(out.read_text())["config"]["distance_thresholds"] == [4.0]


def test_single_model_ensemble_is_identity(scene, tmp_path):
    manifest = json.loads((scene / "manifest_detections.json").read_text())
    manifest["models"] = manifest["models"][:1]
    m = scene / "single.json"
    m.write_text(json.dumps(manifest))
    out = tmp_path / "fused.jsonl"
    assert main(["ensemble", "--manifest", str(m), "--out", str(out)]) == 0
    fused = read_frameset(out, "detection")
    original = read_frameset(scene / "a_detections.jsonl", "detection")
    for key in original.keys():
        assert sorted(original[key], key=lambda b: -b.score) == list(fused[key])


def test_forecast_ensemble(scene, tmp_path):
    out = tmp_path / "fc.jsonl"
    assert main(["ensemble", "--manifest", str(scene / "manifest.json"), "--out", str(out)]) == 0
    assert read_frameset(out, "forecast").num_entries() > 0


def test_tta_merge_command(scene, tmp_path):
    spec = {"iou_threshold": 0.5, "inputs": [{"path": str(scene / "a_detections.jsonl")},
                                             {"path": str(scene / "a_detections.jsonl"), "scale": 1.0}]}
    (tmp_path / "tta.json").write_text(json.dumps(spec))
    out = tmp_path / "merged.jsonl"
    assert main(["tta-merge", "--spec", str(tmp_path / "tta.json"), "--out", str(out)]) == 0
    assert read_frameset(out, "detection") == FrameSet(
        "detection",
        {
            k: sorted(v, key=lambda b: -b.score)
            for k, v in read_frameset(scene / "a_detections.jsonl", "detection").items()
        },
    )


def test_voxelize_and_resample_commands(tmp_path, rng):
    write_points(tmp_path / "p.bin", rng.uniform(-50, 50, size=(1000, 4)))
    assert main(["voxelize", "--points", str(tmp_path / "p.bin"), "--out", str(tmp_path / "v.json")]) == 0
    assert json.loads((tmp_path / "v.json").read_text())["dims"] == [1440, 1440, 30]
    lines = [{"log_id": "l", "timestamp_ns": i, "counts": {"A" if i else "B": 1}} for i in range(4)]
    (tmp_path / "idx.jsonl").write_text("".join(json.dumps(x) + "\n" for x in lines))
    args = ["resample", "--index", str(tmp_path / "idx.jsonl"), "-n", "50", "--seed", "1", "--out", str(tmp_path / "r.json")]
    assert main(args) == 0
    assert len(json.loads((tmp_path / "r.json").read_text())["samples"]) == 50


def test_usage_errors_exit_1(capsys):
    assert main([]) == 1
    assert main(["evaluate", "nonsense", "--gt", "a", "--pred", "b", "--out", "c"]) == 1
    assert main(["resample", "--index", "x", "-n", "many", "--seed", "1", "--out", "y"]) == 1


def test_missing_file_exits_2(tmp_path):
    args = ["evaluate", "detection", "--gt", str(tmp_path / "nope.jsonl"),
            "--pred", str(tmp_path / "nope.jsonl"), "--out", str(tmp_path / "r.json")]
    assert main(args) == 2
    assert not (tmp_path / "r.json").exists()


def test_invalid_input_exits_1_without_output(scene, tmp_path, capsys):
    bad = tmp_path / "bad.jsonl"
    text = (scene / "a_detections.jsonl").read_text().replace('"l": ', '"l": -', 1)
    bad.write_text(text)
    out = tmp_path / "r.json"
    args = ["evaluate", "detection", "--gt", str(scene / "gt_detections.jsonl"), "--pred", str(bad), "--out", str(out)]
    assert main(args) == 1
    assert not out.exists()
    assert "size not positive" in capsys.readouterr().err


def test_mismatched_ensemble_keys_exit_1(tmp_path, capsys):
    from perceval.core import Box3D

    box = Box3D((0, 0, 0), (1, 1, 1), 0.0, category="BUS")
    for name, ts in (("a", 0), ("b", 1)):
        write_frameset(FrameSet("detection", {FrameKey("l", ts): [box]}), tmp_path / f"{name}.jsonl")
    (tmp_path / "m.json").write_text(json.dumps({"models": [{"id": "a", "path": "a.jsonl"}, {"id": "b", "path": "b.jsonl"}]}))
    assert main(["ensemble", "--manifest", str(tmp_path / "m.json"), "--out", str(tmp_path / "o.jsonl")]) == 1
    assert not (tmp_path / "o.jsonl").exists()
    assert "mismatched frame keys" in capsys.readouterr().err


def test_threads_env_fallback(scene, tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("PERCEVAL_THREADS", "3")
    assert main(["ensemble", "--manifest", str(scene / "manifest.json"), "--out", str(tmp_path / "o.jsonl")]) == 0
    summary = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert summary["run"]["threads"] == 3


def test_console_entry_point_runs(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "perceval.cli", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and "perceval" in proc.stdout
    proc = subprocess.run([sys.executable, "-m", "perceval.cli", "synth"], capture_output=True, text=True)
    assert proc.returncode == 1
