"""Thresholding pipeline, calibration search, and severity arithmetic."""

import numpy as np
import pytest

from tarspot import autogt, binmorph, color
from tarspot.errors import ContractError, DegenerateInputError
from tarspot.metrics import MatchConfig
from tarspot.synth import LEAF_GREEN, SPOT_DARK

GREEN = np.array(LEAF_GREEN, dtype=np.uint8)
DARK = np.array(SPOT_DARK, dtype=np.uint8)


def _two_tone(h=20, w=30) -> np.ndarray:
    """Green field with one dark 4x6 rectangle at (8, 10)."""
    img = np.empty((h, w, 3), dtype=np.uint8)
    img[:] = GREEN
    img[8:12, 10:16] = DARK
    return img


def test_threshold_rule_is_v_le_and_a_ge():
    img = _two_tone()
    v, a = color.spot_planes(img)
    cfg = autogt.ThresholdConfig(t_v=0.25, t_a=-5.0, morph_iterations=0)
    mask = autogt.spot_mask(img, cfg)
    expect = (v.samples <= np.float32(0.25)) | (a.samples >= np.float32(-5.0))
    assert np.array_equal(mask, expect)
    # boundary is inclusive: t_v set to the pixel's own V still selects it
    # (t_a=128 disables the a* rule, nothing is that red)
    vv = float(v.samples[9, 12])
    edge = autogt.spot_mask(img, autogt.ThresholdConfig(t_v=vv, t_a=128.0, morph_iterations=0))
    assert edge[9, 12]


def test_or_fusion_covers_both_cues():
    # three pixels: dark-but-green, bright-non-green, bright-green
    img = np.array([[[20, 60, 20], [200, 120, 120], [80, 140, 60]]], dtype=np.uint8)
    cfg = autogt.ThresholdConfig(t_v=0.3, t_a=-5.0, morph_iterations=0)
    mask = autogt.spot_mask(img, cfg)
    assert mask[0, 0]  # dark passes the V rule alone
    assert mask[0, 1]  # reddish passes the a* rule alone
    assert not mask[0, 2]  # bright green fails both


def test_morph_iterations_compose():
    rng = np.random.default_rng(1)
    img = np.where(
        (rng.random((40, 40)) < 0.2)[..., None], DARK, GREEN
    ).astype(np.uint8)
    raw = autogt.spot_mask(img, autogt.ThresholdConfig(morph_iterations=0))
    twice = raw
    for _ in range(2):
        twice = binmorph.closing(binmorph.opening(twice))
    assert np.array_equal(
        autogt.spot_mask(img, autogt.ThresholdConfig(morph_iterations=2)), twice
    )


def test_spot_mask_from_planes_equals_spot_mask():
    img = _two_tone()
    cfg = autogt.ThresholdConfig()
    v, a = color.spot_planes(img)
    assert np.array_equal(autogt.spot_mask_from_planes(v, a, cfg), autogt.spot_mask(img, cfg))


def test_auto_ground_truth_counts_spots(small_leaf):
    img, truth = small_leaf
    got = autogt.auto_ground_truth(img, autogt.ThresholdConfig())
    assert len(got.instances) == len(truth.instances)


def test_auto_ground_truth_min_area():
    img = _two_tone()
    img[2, 2] = DARK  # single-pixel speck
    cfg = autogt.ThresholdConfig(morph_iterations=0, min_area=2)
    got = autogt.auto_ground_truth(img, cfg)
    assert len(got.instances) == 1
    assert got.instances[0].area == 24


def test_threshold_config_validation():
    with pytest.raises(ContractError):
        autogt.ThresholdConfig(t_v=1.5)
    with pytest.raises(ContractError):
        autogt.ThresholdConfig(t_a=-200.0)
    with pytest.raises(ContractError):
        autogt.ThresholdConfig(morph_iterations=-1)
    with pytest.raises(ContractError):
        autogt.ThresholdConfig(connectivity=5)
    with pytest.raises(ContractError):
        autogt.ThresholdConfig(min_area=-1)


def test_config_file_round_trip(tmp_path):
    cfg = autogt.ThresholdConfig(t_v=0.31, t_a=-2.5, morph_iterations=2, connectivity=4, min_area=3)
    path = tmp_path / "thresholds.cfg"
    cfg.save(path)
    assert autogt.ThresholdConfig.load(path) == cfg


def test_config_file_parsing(tmp_path):
    path = tmp_path / "t.cfg"
    path.write_text("# comment\nt_v = 0.2\n\nt_a=-4\n", encoding="utf-8")
    assert autogt.parse_config_file(path) == {"t_v": 0.2, "t_a": -4.0}
    path.write_text("bogus = 1\n", encoding="utf-8")
    with pytest.raises(ContractError):
        autogt.parse_config_file(path)


# ---------------------------------------------------------------------------
# calibration
# ---------------------------------------------------------------------------


def test_grid_from_ranges_is_linspace():
    grid = autogt.ThresholdGrid.from_ranges(0.1, 0.4, 4, -8.0, 0.0, 3)
    assert grid.t_v_values == tuple(np.linspace(0.1, 0.4, 4))
    assert grid.t_a_values == tuple(np.linspace(-8.0, 0.0, 3))
    assert len(grid) == 12
    single = autogt.ThresholdGrid.from_ranges(0.25, 0.25, 1, -5.0, -5.0, 1)
    assert single.t_v_values == (0.25,)
    with pytest.raises(ContractError):
        autogt.ThresholdGrid.from_ranges(0.1, 0.4, 0, -8.0, 0.0, 3)
    with pytest.raises(ContractError):
        autogt.ThresholdGrid(t_v_values=(1.5,), t_a_values=(0.0,))


def test_calibrate_picks_best_point(small_leaf):
    img, truth = small_leaf
    # t_v=0.5 floods the leaf (everything dark enough), so only the sane
    # point can reach F1 1.0
    grid = autogt.ThresholdGrid(t_v_values=(0.25, 0.5), t_a_values=(-5.0,))
    result = autogt.calibrate_thresholds([(img, truth)], grid)
    assert result.config.t_v == 0.25
    assert result.best_score == 1.0
    assert result.surface.shape == (2, 3)


def test_calibrate_tie_breaks_toward_lower_thresholds(small_leaf):
    img, truth = small_leaf
    # both points yield identical masks on this image (no pixel has V in
    # (0.2, 0.3] with a* below -5), so scores tie and the lower t_v wins
    grid = autogt.ThresholdGrid(t_v_values=(0.2, 0.3), t_a_values=(-5.0,))
    result = autogt.calibrate_thresholds([(img, truth)], grid)
    surface_scores = result.surface[:, 2]
    assert surface_scores[0] == surface_scores[1]
    assert result.config.t_v == 0.2


def test_calibrate_streams_and_keeps_base_fields(small_leaf):
    img, truth = small_leaf
    base = autogt.ThresholdConfig(morph_iterations=2, connectivity=4, min_area=2)
    grid = autogt.ThresholdGrid(t_v_values=(0.25,), t_a_values=(-5.0,))
    result = autogt.calibrate_thresholds(
        iter([(img, truth)]), grid, MatchConfig(iou_threshold=0.5), base
    )
    assert result.config.morph_iterations == 2
    assert result.config.connectivity == 4
    assert result.config.min_area == 2


def test_calibrate_empty_validation_set():
    grid = autogt.ThresholdGrid(t_v_values=(0.25,), t_a_values=(-5.0,))
    with pytest.raises(DegenerateInputError):
        autogt.calibrate_thresholds([], grid)


def test_write_score_surface(tmp_path, small_leaf):
    img, truth = small_leaf
    grid = autogt.ThresholdGrid(t_v_values=(0.2, 0.3), t_a_values=(-6.0, -4.0))
    result = autogt.calibrate_thresholds([(img, truth)], grid)
    path = tmp_path / "surface.csv"
    autogt.write_score_surface(path, result)
    lines = path.read_text(encoding="utf-8").strip().splitlines()
    assert lines[0] == "t_v,t_a,mean_f1"
    assert len(lines) == 1 + 4
    cells = lines[1].split(",")
    assert float(cells[0]) == 0.2 and float(cells[1]) == -6.0


# ---------------------------------------------------------------------------
# leaf mask and severity
# ---------------------------------------------------------------------------


def test_leaf_mask_unions_spots_and_keeps_largest():
    img = _two_tone()
    img[0:3, 25:28] = (200, 80, 80)  # reddish debris off the leaf
    leaf = autogt.leaf_mask(img)
    assert leaf[9, 12]  # spot pixels count as leaf
    assert leaf[5, 5]  # green pixels count as leaf
    # debris is not connected to the leaf after thresholding green; the
    # largest-component step can only keep one blob
    labels = binmorph.connected_components(leaf, 8)
    assert len(labels.instances) == 1


def test_leaf_mask_from_parts_matches_whole(small_leaf):
    img, _ = small_leaf
    cfg = autogt.ThresholdConfig()
    v, a = color.spot_planes(img)
    spot = autogt.spot_mask_from_planes(v, a, cfg)
    assert np.array_equal(
        autogt.leaf_mask_from_parts(a, spot), autogt.leaf_mask(img, cfg)
    )


def test_severity_arithmetic():
    labels = np.zeros((10, 10), dtype=np.int32)
    labels[0:2, 0:3] = 1  # area 6
    labels[5:7, 5:7] = 2  # area 4
    instances = binmorph.instances_from_labels(labels)
    leaf = np.zeros((10, 10), dtype=bool)
    leaf[0:8, 0:10] = True  # area 80
    report = autogt.severity(instances, leaf)
    assert report.spot_count == 2
    assert report.spot_area == 10
    assert report.leaf_area == 80
    assert report.infected_fraction == 10 / 80
    assert report.to_dict()["infected_fraction"] == 0.125


def test_severity_requires_nonempty_leaf():
    instances = binmorph.instances_from_labels(np.zeros((5, 5), dtype=np.int32))
    with pytest.raises(DegenerateInputError):
        autogt.severity(instances, np.zeros((5, 5), dtype=bool))
    with pytest.raises(ContractError):
        autogt.severity(instances, np.zeros((4, 5), dtype=bool))
