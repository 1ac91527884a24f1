"""RLE codec, manifest round-trips, dataset splitting, overlay rendering."""

import json

import numpy as np
import pytest

import oracles
from tarspot import annot
from tarspot.binmorph import instances_from_labels
from tarspot.errors import (
    ContractError,
    DegenerateInputError,
    ManifestError,
    ManifestReferenceError,
    ManifestSchemaError,
    RleDecodeError,
    UnsupportedSegmentationError,
)


def _rand_masks(n, shapes=((9, 7), (16, 16), (5, 23), (1, 8), (8, 1)), seed=0):
    rng = np.random.default_rng(seed)
    for i in range(n):
        h, w = shapes[i % len(shapes)]
        yield rng.random((h, w)) < rng.uniform(0.1, 0.9)


# ---------------------------------------------------------------------------
# RLE codec
# ---------------------------------------------------------------------------


def test_rle_matches_naive_and_round_trips():
    for mask in _rand_masks(120, seed=1):
        rle = annot.rle_encode(mask)
        assert list(rle.counts) == oracles.rle_naive(mask)
        assert np.array_equal(annot.rle_decode(rle), mask)


def test_rle_edge_masks():
    empty = np.zeros((4, 6), dtype=bool)
    rle = annot.rle_encode(empty)
    assert rle.counts == (24,)
    full = np.ones((4, 6), dtype=bool)
    rle = annot.rle_encode(full)
    assert rle.counts == (0, 24)  # leading zero background run
    assert np.array_equal(annot.rle_decode(rle), full)
    single = np.zeros((1, 1), dtype=bool)
    single[0, 0] = True
    assert annot.rle_encode(single).counts == (0, 1)


def test_rle_is_column_major():
    mask = np.array([[1, 0], [0, 0], [0, 1]], dtype=bool)
    # column-major pixel order: (0,0),(1,0),(2,0),(0,1),(1,1),(2,1)
    assert annot.rle_encode(mask).counts == (0, 1, 4, 1)


def test_rle_decode_rejects_bad_counts():
    with pytest.raises(RleDecodeError):
        annot.rle_decode(annot.RleMask(width=2, height=2, counts=(1, 1)))  # sum != 4
    with pytest.raises(RleDecodeError):
        annot.rle_decode(annot.RleMask(width=2, height=2, counts=(1, 0, 3)))  # inner zero
    with pytest.raises(RleDecodeError):
        annot.rle_decode(annot.RleMask(width=2, height=2, counts=(-1, 5)))
    with pytest.raises(RleDecodeError):
        annot.rle_decode(annot.RleMask(width=2, height=2, counts=()))
    # a leading zero is allowed only at index 0
    ok = annot.rle_decode(annot.RleMask(width=2, height=2, counts=(0, 4)))
    assert ok.all()


def test_rle_encode_instance_matches_full_frame():
    rng = np.random.default_rng(3)
    for _ in range(30):
        labels = np.zeros((14, 11), dtype=np.int32)
        labels[2:7, 1:5] = 1
        blob = rng.random((4, 5)) < 0.6
        blob[0, 0] = True
        labels[8:12, 5:10][blob] = 2
        inst = instances_from_labels(labels)
        for k in (1, 2):
            # encoded from the bbox-local view but spanning the full frame,
            # same as encoding the instance's whole-frame mask directly
            rle = annot.rle_encode_instance(inst, k)
            assert (rle.width, rle.height) == (11, 14)
            assert rle == annot.rle_encode(inst.labels == k)
            assert np.array_equal(annot.rle_decode(rle), inst.labels == k)


# ---------------------------------------------------------------------------
# manifest round-trips
# ---------------------------------------------------------------------------


def _tiny_dataset(n=3, seed=5):
    rng = np.random.default_rng(seed)
    pairs = []
    for i in range(1, n + 1):
        labels = np.zeros((12, 18), dtype=np.int32)
        for k in range(1, int(rng.integers(0, 4)) + 1):
            x, y = int(rng.integers(0, 14)), int(rng.integers(0, 8))
            labels[y : y + 3, x : x + 3] = k
        ref = annot.ImageRef(id=i, file=f"img_{i:04d}.png", width=18, height=12)
        pairs.append((ref, instances_from_labels(labels)))
    return pairs


def test_export_import_export_is_byte_identical():
    pairs = _tiny_dataset()
    manifest = annot.export_coco(pairs)
    text1 = annot.manifest_to_json(manifest)
    again = annot.export_coco(
        [(ref, inst) for ref, inst in annot.import_coco(manifest)]
    )
    assert annot.manifest_to_json(again) == text1


def test_manifest_file_round_trip(tmp_path):
    manifest = annot.export_coco(_tiny_dataset())
    path = tmp_path / "dataset.json"
    annot.write_manifest(path, manifest)
    assert annot.read_manifest(path) == manifest
    # atomic write leaves no temp droppings
    assert [p.name for p in tmp_path.iterdir()] == ["dataset.json"]


def test_build_instances_round_trip():
    for ref, inst in _tiny_dataset(5, seed=6):
        anns = annot.image_annotations(ref, inst, 1)
        rebuilt = annot.build_instances(ref, anns)
        assert np.array_equal(rebuilt.labels, inst.labels)
        assert rebuilt.instances == inst.instances


def test_build_instances_validates_area_and_bbox():
    ref = annot.ImageRef(id=1, file="x.png", width=4, height=4)
    labels = np.zeros((4, 4), dtype=np.int32)
    labels[1:3, 1:3] = 1
    anns = annot.image_annotations(ref, instances_from_labels(labels), 1)
    good = json.loads(json.dumps(anns))  # deep copy
    bad_area = json.loads(json.dumps(anns))
    bad_area[0]["area"] = 5
    with pytest.raises(ManifestSchemaError):
        annot.build_instances(ref, bad_area)
    bad_bbox = json.loads(json.dumps(anns))
    bad_bbox[0]["bbox"] = [0, 0, 2, 2]
    with pytest.raises(ManifestSchemaError):
        annot.build_instances(ref, bad_bbox)
    # size inconsistent with its own counts fails RLE validation
    bad_size = json.loads(json.dumps(anns))
    bad_size[0]["segmentation"]["size"] = [5, 4]
    with pytest.raises(ManifestError):
        annot.build_instances(ref, bad_size)
    # internally consistent RLE that disagrees with the image geometry
    wrong_frame = json.loads(json.dumps(anns))
    wrong_frame[0]["segmentation"]["size"] = [4, 5]
    wrong_frame[0]["segmentation"]["counts"] = [5, 2, 2, 2, 9]
    with pytest.raises(ManifestSchemaError):
        annot.build_instances(ref, wrong_frame)
    assert len(annot.build_instances(ref, good).instances) == 1


def test_rle_bbox_pins_rows_when_run_crosses_column():
    # one run spanning a column bottom into the next column touches both
    # row h-1 and row 0, so the bbox covers the full height
    h, w = 5, 3
    flat = np.zeros(h * w, dtype=bool)
    flat[3:7] = True  # rows 3,4 of col 0 then rows 0,1 of col 1
    mask = flat.reshape((h, w), order="F")
    rle = annot.rle_encode(mask)
    labels = np.zeros((h, w), dtype=np.int32)
    labels[mask] = 1
    inst = instances_from_labels(labels)
    ref = annot.ImageRef(id=1, file="x.png", width=w, height=h)
    anns = annot.image_annotations(ref, inst, 1)
    rebuilt = annot.build_instances(ref, anns)
    assert np.array_equal(rebuilt.labels, labels)
    ys, xs = np.nonzero(mask)
    assert anns[0]["bbox"] == [int(xs.min()), int(ys.min()), 2, int(ys.max() - ys.min()) + 1]


def test_manifest_rejects_polygon_segmentation():
    ref = annot.ImageRef(id=1, file="x.png", width=4, height=4)
    ann = {
        "id": 1,
        "image_id": 1,
        "category_id": 1,
        "bbox": [0, 0, 2, 2],
        "area": 4,
        "iscrowd": 0,
        "segmentation": [[0.0, 0.0, 2.0, 0.0, 2.0, 2.0]],
    }
    with pytest.raises(UnsupportedSegmentationError):
        annot.build_instances(ref, [ann])


def test_manifest_reference_errors():
    manifest = annot.export_coco(_tiny_dataset())
    manifest["annotations"][0]["image_id"] = 999
    with pytest.raises(ManifestReferenceError):
        annot.import_coco(manifest)


def test_manifest_refs_and_annotations_index():
    manifest = annot.export_coco(_tiny_dataset())
    refs = annot.manifest_refs(manifest)
    assert sorted(refs) == [1, 2, 3]
    assert refs[2].width == 18
    by_image = annot.manifest_annotations(manifest, refs)
    total = sum(len(v) for v in by_image.values())
    assert total == len(manifest["annotations"])


# ---------------------------------------------------------------------------
# splitting
# ---------------------------------------------------------------------------


def _manifest_of(n):
    pairs = []
    for i in range(1, n + 1):
        ref = annot.ImageRef(id=i, file=f"img_{i:05d}.png", width=4, height=4)
        pairs.append((ref, instances_from_labels(np.zeros((4, 4), dtype=np.int32))))
    return annot.export_coco(pairs)


def test_split_counts_and_determinism():
    manifest = _manifest_of(100)
    out = annot.split_dataset(manifest, ratio=(4, 1), seed=0)
    names = [e["split"] for e in out["images"]]
    assert names.count("test") == 80 and names.count("val") == 20
    again = annot.split_dataset(manifest, ratio=(4, 1), seed=0)
    assert [e["split"] for e in again["images"]] == names
    other = annot.split_dataset(manifest, ratio=(4, 1), seed=1)
    assert [e["split"] for e in other["images"]] != names
    # input untouched
    assert all(e.get("split") is None for e in manifest["images"])


def test_split_remainder_goes_to_larger_side():
    out = annot.split_dataset(_manifest_of(7), ratio=(4, 1))
    names = [e["split"] for e in out["images"]]
    # 7*4//5 = 5, 7*1//5 = 1, leftover 1 -> test gets 6
    assert names.count("test") == 6 and names.count("val") == 1


def test_split_refuses_double_split_without_force():
    manifest = _manifest_of(10)
    once = annot.split_dataset(manifest)
    with pytest.raises(ContractError):
        annot.split_dataset(once)
    redo = annot.split_dataset(once, seed=3, force=True)
    assert all(e["split"] in ("test", "val") for e in redo["images"])


def test_split_validation():
    manifest = _manifest_of(4)
    with pytest.raises(ContractError):
        annot.split_dataset(manifest, ratio=(0, 1))
    with pytest.raises(ContractError):
        annot.split_dataset(manifest, split_names=("test", "test"))
    with pytest.raises(ContractError):
        annot.split_dataset(manifest, split_names=("test", "holdout"))
    with pytest.raises(DegenerateInputError):
        annot.split_dataset({"images": [], "annotations": [], "categories": []})


# ---------------------------------------------------------------------------
# overlays and image io
# ---------------------------------------------------------------------------


def test_render_overlay_touches_only_instance_pixels():
    img = np.full((10, 10, 3), 100, dtype=np.uint8)
    labels = np.zeros((10, 10), dtype=np.int32)
    labels[2:6, 3:8] = 1
    inst = instances_from_labels(labels)
    out = annot.render_overlay(img, inst)
    assert out.shape == img.shape and out.dtype == np.uint8
    changed = (out != img).any(axis=2)
    assert np.array_equal(changed, labels > 0)
    # deterministic
    assert np.array_equal(annot.render_overlay(img, inst), out)
    # boundary pixels are the solid palette color
    color = annot.OVERLAY_PALETTE[0]
    assert tuple(out[2, 3]) == color
    # interior pixels are blended, not solid
    assert tuple(out[4, 5]) != color


def test_render_overlay_contracts():
    inst = instances_from_labels(np.zeros((4, 4), dtype=np.int32))
    with pytest.raises(ContractError):
        annot.render_overlay(np.zeros((4, 4), dtype=np.uint8), inst)
    with pytest.raises(ContractError):
        annot.render_overlay(np.zeros((5, 4, 3), dtype=np.uint8), inst)


def test_save_and_load_image_round_trip(tmp_path):
    rng = np.random.default_rng(9)
    img = rng.integers(0, 256, size=(20, 30, 3), dtype=np.uint8)
    path = tmp_path / "img.png"
    annot.save_image(path, img)
    assert np.array_equal(annot.load_image(path), img)
