import numpy as np
import pytest
import torch

from rangediff import ConditionPair, SamplerConfig, build_linear_schedule
from rangediff.checkpoint import (
    TENSORS_BIN,
    load_filter_checkpoint,
    load_generator_checkpoint,
    load_recognizer_checkpoint,
    load_tensor_blob,
    save_filter_checkpoint,
    save_generator_checkpoint,
    save_recognizer_checkpoint,
    save_tensor_blob,
)
from rangediff.quality import FilterConfig, FilterModel, QualityFilterNet
from rangediff.recognizer import RecognizerConfig, RecognizerModel, SmallConvRecognizer
from rangediff.toyworld import toy_vocabulary
from rangediff.unet import ConditionalUNet, UNetConfig

from conftest import make_rng


def test_tensor_blob_round_trip_is_byte_exact(tmp_path):
    g = make_rng(0)
    state = {
        "weight": torch.randn(4, 3, 3, 3, generator=g),
        "bias": torch.randn(4, generator=g),
        "scalar": torch.randn((), generator=g),
    }
    save_tensor_blob(tmp_path, state)
    first_bytes = (tmp_path / TENSORS_BIN).read_bytes()
    loaded = load_tensor_blob(tmp_path)
    for name, tensor in state.items():
        assert np.array_equal(loaded[name], tensor.numpy())
        assert loaded[name].dtype == np.float32
    save_tensor_blob(tmp_path, {k: torch.from_numpy(v) for k, v in loaded.items()})
    assert (tmp_path / TENSORS_BIN).read_bytes() == first_bytes


def test_generator_checkpoint_round_trip(tmp_path):
    torch.manual_seed(0)
    vocab = toy_vocabulary()
    model = ConditionalUNet(UNetConfig(base_width=4, depth=1, embedding_dim=8), vocab)
    with torch.no_grad():
        for p in model.parameters():
            p.normal_(0, 0.05)
    schedule = build_linear_schedule(50, 1e-3, 0.03)
    sampler = SamplerConfig(num_steps=7, eta=0.5, guidance_weight=2.0, image_shape=(3, 8, 8))
    save_generator_checkpoint(tmp_path, model, schedule, sampler, extra={"note": 1})

    loaded, schedule2, sampler2, meta = load_generator_checkpoint(tmp_path)
    assert np.array_equal(schedule2.betas, schedule.betas)
    assert loaded.vocab == vocab
    assert sampler2.num_steps == 7 and sampler2.eta == 0.5
    assert meta["extra"] == {"note": 1}
    for (k, a), (_, b) in zip(model.state_dict().items(), loaded.state_dict().items()):
        assert torch.equal(a, b), k
    x = torch.randn(3, 8, 8, generator=make_rng(1))
    with torch.no_grad():
        assert torch.equal(model(x, 3, ConditionPair(0, 0)), loaded(x, 3, ConditionPair(0, 0)))


def test_filter_checkpoint_round_trip(tmp_path):
    torch.manual_seed(1)
    cfg = FilterConfig(num_blocks=2, width=8, input_size=16, threshold=0.7)
    model = FilterModel(net=QualityFilterNet(cfg), config=cfg, threshold=0.7, report={"holdout_accuracy": 0.9})
    save_filter_checkpoint(tmp_path, model)
    loaded = load_filter_checkpoint(tmp_path)
    assert loaded.threshold == 0.7
    assert loaded.config == cfg
    assert loaded.report["holdout_accuracy"] == 0.9
    for (k, a), (_, b) in zip(model.net.state_dict().items(), loaded.net.state_dict().items()):
        assert torch.equal(a, b), k


def test_recognizer_checkpoint_round_trip(tmp_path):
    torch.manual_seed(2)
    cfg = RecognizerConfig(num_classes=6, image_size=16, width=8)
    model = RecognizerModel(net=SmallConvRecognizer(cfg), config=cfg)
    save_recognizer_checkpoint(tmp_path, model)
    loaded = load_recognizer_checkpoint(tmp_path)
    x = torch.randn(3, 16, 16, generator=make_rng(3))
    assert np.array_equal(model.predict(x), loaded.predict(x))


def test_checkpoint_kind_mismatch(tmp_path):
    torch.manual_seed(3)
    cfg = FilterConfig(num_blocks=1, width=8, input_size=16)
    save_filter_checkpoint(tmp_path, FilterModel(net=QualityFilterNet(cfg), config=cfg))
    with pytest.raises(ValueError, match="not a generator"):
        load_generator_checkpoint(tmp_path)
    with pytest.raises(FileNotFoundError):
        load_filter_checkpoint(tmp_path / "missing")
