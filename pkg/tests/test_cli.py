"""End-to-end CLI behavior: exit codes, event stream, reproducibility."""

import json
import sys
from pathlib import Path

import numpy as np
import pytest

from tarspot import annot, synth
from tarspot.synth import SynthConfig

pytestmark = pytest.mark.usefixtures("run_cli")


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    """Three small leaves on disk plus their exact truth manifest."""
    root = tmp_path_factory.mktemp("cli-data")
    manifest = synth.generate_dataset(
        root, 3, SynthConfig(width=240, height=160, spot_count_range=(4, 9)), seed=5
    )
    files = sorted(str(p) for p in root.glob("img_*.png"))
    return {"dir": root, "manifest": manifest, "files": files}


def _events_of(events, kind):
    return [e for e in events if e.get("event") == kind]


# ---------------------------------------------------------------------------
# groundtruth
# ---------------------------------------------------------------------------


def test_groundtruth_happy_path(run_cli, dataset, tmp_path):
    code, events, err = run_cli(
        "groundtruth", *dataset["files"], "-o", tmp_path / "gt"
    )
    assert code == 0
    assert len(_events_of(events, "image")) == 3
    summary = _events_of(events, "summary")[0]
    assert summary["ok"] == 3 and summary["failed"] == 0
    manifest = annot.read_manifest(tmp_path / "gt" / "groundtruth.json")
    assert len(manifest["images"]) == 3
    # every stdout line is one JSON object with an event key
    assert all("event" in e for e in events)


def test_groundtruth_is_byte_reproducible(run_cli, dataset, tmp_path):
    run_cli("groundtruth", *dataset["files"], "-o", tmp_path / "a")
    run_cli("groundtruth", *dataset["files"], "-o", tmp_path / "b")
    assert (tmp_path / "a" / "groundtruth.json").read_bytes() == (
        tmp_path / "b" / "groundtruth.json"
    ).read_bytes()


def test_groundtruth_matches_synth_truth(run_cli, dataset, tmp_path):
    # thresholding without morphology reproduces the planted labels exactly
    code, _, _ = run_cli(
        "groundtruth", *dataset["files"], "-o", tmp_path / "gt", "--morph-iterations", 0
    )
    assert code == 0
    got = annot.import_coco(tmp_path / "gt" / "groundtruth.json")
    want = annot.import_coco(dataset["manifest"])
    for (_, g), (_, w) in zip(got, want):
        assert np.array_equal(g.labels, w.labels)


def test_groundtruth_overlays(run_cli, dataset, tmp_path):
    code, _, _ = run_cli(
        "groundtruth", dataset["files"][0], "-o", tmp_path / "gt", "--overlays"
    )
    assert code == 0
    overlays = list((tmp_path / "gt" / "overlays").glob("*_overlay.png"))
    assert len(overlays) == 1


def test_empty_glob_is_usage_error(run_cli, tmp_path):
    code, events, _ = run_cli("groundtruth", tmp_path / "nope*.png", "-o", tmp_path / "o")
    assert code == 2
    assert _events_of(events, "error")


def test_missing_file_is_usage_error(run_cli, tmp_path):
    code, _, _ = run_cli("groundtruth", tmp_path / "absent.png", "-o", tmp_path / "o")
    assert code == 2


def test_corrupt_input_partial_and_strict(run_cli, dataset, tmp_path):
    # same directory so the sorted input order is known: bad before good
    bad = tmp_path / "aa_bad.png"
    bad.write_bytes(b"not a png")
    good = tmp_path / "zz_good.png"
    good.write_bytes(Path(dataset["files"][0]).read_bytes())
    code, events, _ = run_cli("groundtruth", bad, good, "-o", tmp_path / "gt")
    assert code == 3  # partial: one ok, one failed
    summary = _events_of(events, "summary")[0]
    assert summary["ok"] == 1 and summary["failed"] == 1
    statuses = {e["file"]: e["status"] for e in _events_of(events, "image")}
    assert statuses[str(bad)] == "error" and statuses[str(good)] == "ok"
    # strict aborts at the first failure and skips the rest: nothing
    # succeeded, so the whole run counts as failed
    code, events, _ = run_cli(
        "groundtruth", bad, good, "-o", tmp_path / "gt2", "--strict"
    )
    assert code == 1
    summary = _events_of(events, "summary")[0]
    assert summary["ok"] == 0 and summary["failed"] == 1 and summary["skipped"] == 1
    # all inputs corrupt -> total failure
    code, _, _ = run_cli("groundtruth", bad, "-o", tmp_path / "gt3")
    assert code == 1


# ---------------------------------------------------------------------------
# detect
# ---------------------------------------------------------------------------


def test_detect_writes_detections_and_severity(run_cli, dataset, tmp_path):
    code, events, _ = run_cli("detect", *dataset["files"], "-o", tmp_path / "det")
    assert code == 0
    per_image = _events_of(events, "image")
    assert all("seconds" in e and e["seconds"] >= 0 for e in per_image)
    sev = json.loads((tmp_path / "det" / "severity.json").read_text())
    assert len(sev["images"]) == 3
    for entry in sev["images"]:
        s = entry["severity"]
        assert 0.0 <= s["infected_fraction"] <= 1.0
        assert s["spot_count"] >= 1
    det = annot.read_manifest(tmp_path / "det" / "detections.json")
    assert len(det["images"]) == 3


def test_detect_tiled_single_window_identical(run_cli, dataset, tmp_path):
    run_cli("detect", dataset["files"][0], "-o", tmp_path / "plain")
    code, _, _ = run_cli(
        "detect", dataset["files"][0], "-o", tmp_path / "tiled",
        "--tiled", "--window", "240x160", "--stride", "240x160",
    )
    assert code == 0
    assert (tmp_path / "plain" / "detections.json").read_bytes() == (
        tmp_path / "tiled" / "detections.json"
    ).read_bytes()


def test_detect_window_larger_than_image_fails(run_cli, dataset, tmp_path):
    code, events, _ = run_cli(
        "detect", dataset["files"][0], "-o", tmp_path / "det", "--tiled"
    )
    # default 600x400 window does not fit a 240x160 image
    assert code == 1
    assert _events_of(events, "image")[0]["status"] == "error"


def test_detect_external_stub(run_cli, dataset, tmp_path):
    stub = tmp_path / "stub.py"
    stub.write_text(
        "import json, sys\n"
        "from pathlib import Path\n"
        "request = Path(sys.argv[-1])\n"
        "manifest = json.loads((request / 'manifest.json').read_text())\n"
        "out = [{'patch_id': e['patch_id'], 'instances': [\n"
        "    {'bbox': [2, 3, 2, 2], 'score': 0.8, 'rle': [0, 4]}]} for e in manifest]\n"
        "(request / 'detections.json').write_text(json.dumps(out))\n",
        encoding="utf-8",
    )
    code, events, _ = run_cli(
        "detect", dataset["files"][0], "-o", tmp_path / "det",
        "--detector", f"external:{sys.executable} {stub}",
    )
    assert code == 0
    det = annot.read_manifest(tmp_path / "det" / "detections.json")
    assert len(det["annotations"]) == 1
    assert det["annotations"][0]["bbox"] == [2, 3, 2, 2]


# ---------------------------------------------------------------------------
# threshold precedence
# ---------------------------------------------------------------------------


def test_config_file_and_flag_precedence(run_cli, dataset, tmp_path):
    # config file blinds the detector: t_v=0 never fires, t_a=128 never fires
    blind = tmp_path / "blind.cfg"
    blind.write_text("t_v = 0.0\nt_a = 128.0\nmorph_iterations = 0\n", encoding="utf-8")
    code, events, _ = run_cli(
        "detect", dataset["files"][0], "-o", tmp_path / "a", "--config", blind
    )
    assert code == 0
    det = annot.read_manifest(tmp_path / "a" / "detections.json")
    assert len(det["annotations"]) == 0
    # explicit flags override the file and see the spots again
    code, _, _ = run_cli(
        "detect", dataset["files"][0], "-o", tmp_path / "b",
        "--config", blind, "--threshold-v", "0.25", "--threshold-a", "-5",
    )
    assert code == 0
    det = annot.read_manifest(tmp_path / "b" / "detections.json")
    assert len(det["annotations"]) > 0


def test_unknown_config_key_is_usage_error(run_cli, dataset, tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("sharpness = 11\n", encoding="utf-8")
    code, _, _ = run_cli(
        "detect", dataset["files"][0], "-o", tmp_path / "o", "--config", cfg
    )
    assert code == 2


# ---------------------------------------------------------------------------
# calibrate / eval / export / split / overlay
# ---------------------------------------------------------------------------


def test_calibrate_writes_thresholds_and_surface(run_cli, dataset, tmp_path):
    code, events, _ = run_cli(
        "calibrate", "--manifest", dataset["manifest"], "-o", tmp_path / "cal",
        "--grid-v", "0.15:0.35:3", "--grid-a=-8:0:3",
    )
    assert code == 0
    grid = _events_of(events, "grid")[0]
    assert grid["points"] == 9
    best = _events_of(events, "best")[0]
    assert best["mean_f1"] == 1.0
    from tarspot.autogt import parse_config_file

    loaded = parse_config_file(tmp_path / "cal" / "thresholds.cfg")
    assert loaded["t_v"] == 0.15  # ties break toward the lower thresholds
    assert loaded["t_a"] == -8.0
    surface = (tmp_path / "cal" / "surface.csv").read_text().splitlines()
    assert surface[0] == "t_v,t_a,mean_f1" and len(surface) == 10


def test_calibrated_config_feeds_detect(run_cli, dataset, tmp_path):
    run_cli(
        "calibrate", "--manifest", dataset["manifest"], "-o", tmp_path / "cal",
        "--grid-v", "0.25:0.25:1", "--grid-a=-5:-5:1",
    )
    code, _, _ = run_cli(
        "detect", *dataset["files"], "-o", tmp_path / "det",
        "--config", tmp_path / "cal" / "thresholds.cfg",
    )
    assert code == 0


def test_eval_reports_perfect_f1_against_own_groundtruth(run_cli, dataset, tmp_path):
    run_cli("detect", *dataset["files"], "-o", tmp_path / "det")
    code, events, err = run_cli(
        "eval", "--pred", tmp_path / "det" / "detections.json",
        "--truth", dataset["manifest"], "-o", tmp_path / "eval",
    )
    assert code == 0
    report = _events_of(events, "report")[0]
    assert report["f1"] == 1.0
    assert report["count_error"] == 0.0
    assert "instance F1" in err  # human table goes to stderr
    on_disk = json.loads((tmp_path / "eval" / "report.json").read_text())
    assert on_disk["f1"] == 1.0


def test_eval_mismatched_sets_is_usage_error(run_cli, dataset, tmp_path):
    run_cli("detect", dataset["files"][0], "-o", tmp_path / "det")
    code, _, _ = run_cli(
        "eval", "--pred", tmp_path / "det" / "detections.json",
        "--truth", dataset["manifest"],
    )
    assert code == 2  # truth covers 3 images, predictions only 1


def test_split_then_export_filters(run_cli, dataset, tmp_path):
    code, events, _ = run_cli(
        "split", "--manifest", dataset["manifest"], "-o", tmp_path / "sp",
        "--ratio", "2:1",
    )
    assert code == 0
    counts = _events_of(events, "summary")[0]["counts"]
    assert counts == {"test": 2, "val": 1}
    split_manifest = tmp_path / "sp" / "split.json"
    code, _, _ = run_cli(
        "export", "--manifest", split_manifest, "-o", tmp_path / "exp", "--split", "val"
    )
    assert code == 0
    out = annot.read_manifest(tmp_path / "exp" / "dataset.json")
    assert len(out["images"]) == 1
    # double split without --force fails
    code, _, _ = run_cli("split", "--manifest", split_manifest, "-o", tmp_path / "sp2")
    assert code == 1
    code, _, _ = run_cli(
        "split", "--manifest", split_manifest, "-o", tmp_path / "sp3", "--force"
    )
    assert code == 0


def test_split_is_seed_deterministic(run_cli, dataset, tmp_path):
    run_cli("split", "--manifest", dataset["manifest"], "-o", tmp_path / "s1", "--seed", 3)
    run_cli("split", "--manifest", dataset["manifest"], "-o", tmp_path / "s2", "--seed", 3)
    assert (tmp_path / "s1" / "split.json").read_bytes() == (
        tmp_path / "s2" / "split.json"
    ).read_bytes()


def test_export_is_idempotent(run_cli, dataset, tmp_path):
    run_cli("export", "--manifest", dataset["manifest"], "-o", tmp_path / "e1")
    run_cli("export", "--manifest", tmp_path / "e1" / "dataset.json", "-o", tmp_path / "e2")
    assert (tmp_path / "e1" / "dataset.json").read_bytes() == (
        tmp_path / "e2" / "dataset.json"
    ).read_bytes()


def test_overlay_from_manifest(run_cli, dataset, tmp_path):
    code, events, _ = run_cli(
        "overlay", "--manifest", dataset["manifest"], "-o", tmp_path / "ov"
    )
    assert code == 0
    files = sorted((tmp_path / "ov" / "overlays").glob("*.png"))
    assert len(files) == 3
    assert files[0].name.startswith("00001_")


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------


def test_bench_reports_mean_and_sd(run_cli, dataset, tmp_path):
    code, events, err = run_cli(
        "bench", dataset["files"][0], "--runs", 2, "-o", tmp_path / "bench"
    )
    assert code == 0
    rows = _events_of(events, "bench")
    assert len(rows) == 1
    row = rows[0]
    assert row["runs"] == 2 and row["mean_s"] > 0 and row["sd_s"] >= 0
    assert row["detector"] == "classical"
    on_disk = json.loads((tmp_path / "bench" / "bench.json").read_text())
    assert on_disk["rows"][0]["mean_s"] == row["mean_s"]


def test_bench_compare_backends(run_cli, dataset, tmp_path):
    code, events, _ = run_cli(
        "bench", dataset["files"][0], "--runs", 1, "--compare-backends"
    )
    assert code == 0
    backends = {e["backend"] for e in _events_of(events, "bench")}
    assert backends == {"numba", "numpy"}


# ---------------------------------------------------------------------------
# parser-level behavior
# ---------------------------------------------------------------------------


def test_invalid_worker_count_exits_2(dataset, tmp_path, capsys):
    from tarspot import cli

    with pytest.raises(SystemExit) as exc:
        cli.main(["groundtruth", dataset["files"][0], "-o", str(tmp_path), "--workers", "0"])
    assert exc.value.code == 2
    capsys.readouterr()


def test_unknown_subcommand_exits_2(capsys):
    from tarspot import cli

    with pytest.raises(SystemExit) as exc:
        cli.main(["frobnicate"])
    assert exc.value.code == 2
    capsys.readouterr()


def test_workers_parallel_matches_serial(run_cli, dataset, tmp_path):
    run_cli("groundtruth", *dataset["files"], "-o", tmp_path / "w1")
    run_cli("groundtruth", *dataset["files"], "-o", tmp_path / "w3", "--workers", 3)
    assert (tmp_path / "w1" / "groundtruth.json").read_bytes() == (
        tmp_path / "w3" / "groundtruth.json"
    ).read_bytes()
