import hashlib
import os

import numpy as np
import pytest

from rangediff.toyworld import (
    EMPTY_CLASS_ID,
    SHAPE_CLASS_NAMES,
    ToyWorldConfig,
    foreground_mask,
    generate_toy_dataset,
    measure_foreground_area,
    oracle_classify,
    oracle_detect,
    render_sample,
    toy_quality_label,
    toy_vocabulary,
)

from conftest import np_rng

SMALL = ToyWorldConfig(image_size=32, s_ref=20.0, distances=(4, 10, 25), seed=11)


def dataset_digest(out_dir, manifest):
    h = hashlib.sha256()
    for s in manifest:
        with open(s.path, "rb") as fh:
            h.update(fh.read())
    with open(os.path.join(out_dir, "manifest.jsonl"), "rb") as fh:
        h.update(fh.read())
    return h.hexdigest()


def test_generation_is_byte_deterministic(tmp_path):
    d1, d2 = tmp_path / "a", tmp_path / "b"
    m1 = generate_toy_dataset(SMALL, 2, d1, test_fraction=0.5)
    m2 = generate_toy_dataset(SMALL, 2, d2, test_fraction=0.5)
    assert dataset_digest(d1, m1) == dataset_digest(d2, m2)


def test_class_histogram_exactly_uniform(tmp_path):
    manifest = generate_toy_dataset(SMALL, 2, tmp_path / "d")
    counts = manifest.class_counts()
    assert (counts == counts[0]).all()
    assert counts.sum() == 6 * len(SMALL.distances) * 2


def test_split_tagging(tmp_path):
    manifest = generate_toy_dataset(SMALL, 4, tmp_path / "d", test_fraction=0.25)
    train = manifest.subset(split="train")
    test = manifest.subset(split="test")
    assert len(test) == 6 * len(SMALL.distances)
    assert len(train) == 3 * len(test)


def test_config_validation():
    with pytest.raises(ValueError, match="2 px"):
        ToyWorldConfig(image_size=64, s_ref=8.0)
    with pytest.raises(ValueError, match="empty mask"):
        ToyWorldConfig(image_size=64, s_ref=10.0)
    with pytest.raises(ValueError, match="margin"):
        ToyWorldConfig(image_size=32, s_ref=31.0)
    with pytest.raises(ValueError, match="4, 25"):
        ToyWorldConfig(distances=(3, 10))


def test_size_vs_distance_area_law():
    config = ToyWorldConfig(image_size=64)
    means = {}
    for d in (4.0, 25.0):
        areas = []
        for i in range(150):
            cid = i % 5  # every non-empty class
            img, truth = render_sample(config, cid, d, np_rng([17, int(d), i]))
            areas.append(truth["mask_area"])
        means[d] = np.mean(areas)
    ratio = means[4.0] / means[25.0]
    assert abs(ratio / (25.0 / 4.0) ** 2 - 1.0) < 0.20


def test_oracle_detector_matches_truth_within_one_pixel():
    config = ToyWorldConfig(image_size=64)
    for i in range(200):
        cid = i % 5
        d = float(4 + i % 22)
        img, truth = render_sample(config, cid, d, np_rng([23, i]))
        box = oracle_detect(img)
        assert box is not None
        err = max(abs(a - b) for a, b in zip(box, truth["truth_box"]))
        assert err <= 1, f"sample {i}: {box} vs {truth['truth_box']}"


def test_empty_class_has_no_detection():
    config = ToyWorldConfig(image_size=64)
    for i in range(20):
        img, truth = render_sample(config, EMPTY_CLASS_ID, 10.0, np_rng([29, i]))
        assert truth["truth_box"] is None
        assert oracle_detect(img) is None
        assert measure_foreground_area(img) == 0


def test_oracle_classifier_correct_at_near_range():
    config = ToyWorldConfig(image_size=64)
    for i in range(60):
        cid = i % 6
        img, _ = render_sample(config, cid, float(4 + i % 9), np_rng([31, i]))
        assert oracle_classify(img) == cid


def test_foreground_mask_area_matches_truth_near_range():
    config = ToyWorldConfig(image_size=64)
    img, truth = render_sample(config, 4, 5.0, np_rng(37))
    area = measure_foreground_area(img)
    assert abs(area - truth["mask_area"]) / truth["mask_area"] < 0.15


def test_quality_oracle_verdicts():
    config = ToyWorldConfig(image_size=64)
    img, _ = render_sample(config, 0, 6.0, np_rng(41))
    assert toy_quality_label(img, 0).passed

    # fragmented: cut a gap through the shape
    box = oracle_detect(img)
    broken = img.copy()
    mid = (box[0] + box[2]) // 2
    broken[:, mid - 1 : mid + 2, :] = 80
    label = toy_quality_label(broken, 0)
    assert not label.passed and "fragment" in label.reason

    # missing foreground
    flat = np.full_like(img, 90)
    label = toy_quality_label(flat, 0)
    assert not label.passed and "missing" in label.reason

    # spurious foreground for the empty class
    label = toy_quality_label(img, EMPTY_CLASS_ID)
    assert not label.passed and "spurious" in label.reason
    empty_img, _ = render_sample(config, EMPTY_CLASS_ID, 6.0, np_rng(43))
    assert toy_quality_label(empty_img, EMPTY_CLASS_ID).passed

    # implausible size: near-range shape claimed to be far away
    label = toy_quality_label(img, 0, expected_distance=25.0, config=config)
    assert not label.passed and "size" in label.reason
    assert toy_quality_label(img, 0, expected_distance=6.0, config=config).passed


def test_truth_metadata_round_trips_through_manifest(tmp_path):
    manifest = generate_toy_dataset(SMALL, 1, tmp_path / "d")
    sample = next(s for s in manifest if s.class_id != EMPTY_CLASS_ID)
    assert sample.meta["size_px"] >= 2
    assert len(sample.meta["truth_box"]) == 4
    assert sample.meta["mask_area"] > 0


def test_vocabulary_matches_shape_names():
    v = toy_vocabulary()
    assert v.class_names == SHAPE_CLASS_NAMES
    assert v.num_classes == 6
    assert v.num_distances == 22
