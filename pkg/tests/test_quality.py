import pytest
import torch

from rangediff.quality import (
    FilterConfig,
    FilterModel,
    QualityFilterNet,
    QualityLabel,
    filter_batch,
    read_labels,
    score,
    score_batch,
    train_filter,
    write_labels,
)

from conftest import make_rng


def untrained_model(input_size=16, seed=0):
    torch.manual_seed(seed)
    cfg = FilterConfig(num_blocks=2, width=8, patch_size=2, input_size=input_size)
    return FilterModel(net=QualityFilterNet(cfg), config=cfg)


def random_images(n, size=16, seed=0):
    g = make_rng(seed)
    return [torch.rand(3, size, size, generator=g) * 2 - 1 for _ in range(n)]


def labeled_halves(n, size=16, seed=0):
    """Separable toy labels: failed images have their top-left quadrant deleted."""
    g = make_rng(seed)
    out = []
    for i in range(n):
        img = torch.rand(3, size, size, generator=g) * 2 - 1
        if i % 2 == 1:
            img[:, : size // 2, : size // 2] = -1.0
            out.append((img, QualityLabel("fail", reason="deleted quadrant")))
        else:
            out.append((img, QualityLabel("pass")))
    return out


def test_quality_label_validates_verdict():
    QualityLabel("pass")
    QualityLabel("fail", reason="smeared")
    with pytest.raises(ValueError):
        QualityLabel("maybe")


def test_label_manifest_round_trip(tmp_path):
    records = [
        ("a.png", QualityLabel("pass")),
        ("b.png", QualityLabel("fail", reason="missing object")),
    ]
    path = tmp_path / "labels.jsonl"
    write_labels(records, path)
    back = read_labels(path)
    assert back == records


def test_label_manifest_reports_bad_lines(tmp_path):
    path = tmp_path / "labels.jsonl"
    path.write_text('{"path": "a.png", "verdict": "pass"}\n{"verdict": "nope"}\n')
    with pytest.raises(ValueError, match=":2"):
        read_labels(path)


def test_score_is_pure_and_in_range():
    model = untrained_model()
    images = random_images(20)
    for img in images[:5]:
        s1, s2 = score(model, img), score(model, img)
        assert s1 == s2
    scores = score_batch(model, images)
    assert float(scores.min()) >= 0.0 and float(scores.max()) <= 1.0


def test_score_rejects_wrong_resolution():
    model = untrained_model(input_size=16)
    with pytest.raises(ValueError):
        score(model, torch.zeros(3, 8, 8))


def test_filter_batch_partition_properties():
    model = untrained_model(seed=1)
    images = random_images(30, seed=2)
    kept, dropped = filter_batch(model, images, tau=0.5)
    assert len(kept) + len(dropped) == len(images)
    # order preserved within each side
    scores = [score(model, img) for img in images]
    want_kept = [img for img, s in zip(images, scores) if s >= 0.5]
    assert all(torch.equal(a, b) for a, b in zip(kept, want_kept))


def test_filter_batch_threshold_floor_and_ceiling():
    model = untrained_model(seed=3)
    images = random_images(10, seed=4)
    kept, dropped = filter_batch(model, images, tau=0.0)
    assert len(kept) == len(images) and not dropped
    top = max(score(model, img) for img in images)
    kept, dropped = filter_batch(model, images, tau=min(1.0, top + 1e-6))
    assert not kept and len(dropped) == len(images)


def test_filter_batch_monotone_in_threshold():
    model = untrained_model(seed=5)
    images = random_images(25, seed=6)
    sizes = []
    for tau in (0.0, 0.25, 0.5, 0.75, 1.0):
        kept, _ = filter_batch(model, images, tau)
        sizes.append(len(kept))
    assert sizes == sorted(sizes, reverse=True)


def test_filter_batch_validates_tau():
    with pytest.raises(ValueError):
        filter_batch(untrained_model(), [], tau=1.5)


def test_train_filter_rejects_degenerate_inputs():
    with pytest.raises(ValueError):
        train_filter([], FilterConfig(input_size=16))
    all_pass = [(img, QualityLabel("pass")) for img in random_images(8)]
    with pytest.raises(ValueError, match="single-class"):
        train_filter(all_pass, FilterConfig(input_size=16))


def test_train_filter_deterministic_under_seed():
    data = labeled_halves(24)
    cfg = FilterConfig(num_blocks=2, width=8, input_size=16, epochs=2, seed=9)
    m1 = train_filter(data, cfg)
    m2 = train_filter(data, cfg)
    for (k, a), (_, b) in zip(m1.net.state_dict().items(), m2.net.state_dict().items()):
        assert torch.equal(a, b), k


def test_train_filter_learns_separable_task_quickly():
    data = labeled_halves(160, seed=10)
    cfg = FilterConfig(num_blocks=2, width=16, input_size=16, epochs=10, seed=0)
    model = train_filter(data, cfg)
    assert model.report["holdout_accuracy"] >= 0.85
    passes = [img for img, lab in data if lab.passed]
    fails = [img for img, lab in data if not lab.passed]
    margin = float(score_batch(model, passes).mean() - score_batch(model, fails).mean())
    assert margin > 0.3
