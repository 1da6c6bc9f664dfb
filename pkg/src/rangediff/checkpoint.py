"""Checkpoint directories: metadata.json + tensors.bin + tensors.index.json.

The tensor blob is a single little-endian float32 byte stream; the index
maps tensor name -> {dtype, shape, byte_offset}.  Round trips are
byte-exact.  metadata.json stores everything needed to rebuild the model
object (schedule recipe, vocabulary, architecture config); derived arrays
are recomputed on load, never stored.
"""

from __future__ import annotations

import json
import os

import numpy as np
import torch

from . import __version__
from .conditioning import ConditionVocabulary
from .diffusion import SamplerConfig
from .quality import FilterConfig, FilterModel, QualityFilterNet
from .recognizer import RecognizerConfig, RecognizerModel, SmallConvRecognizer
from .schedule import NoiseSchedule, schedule_from_metadata, schedule_to_metadata
from .unet import ConditionalUNet, UNetConfig

TENSORS_BIN = "tensors.bin"
TENSORS_INDEX = "tensors.index.json"
METADATA = "metadata.json"


def save_tensor_blob(out_dir, state: dict) -> None:
    """Write named tensors as one f32 blob plus its index."""
    os.makedirs(out_dir, exist_ok=True)
    index = {}
    offset = 0
    chunks = []
    for name, tensor in state.items():
        arr = tensor.detach().cpu().numpy() if torch.is_tensor(tensor) else np.asarray(tensor)
        arr = arr.astype("<f4", order="C", copy=False)
        index[name] = {"dtype": "f32", "shape": list(arr.shape), "byte_offset": offset}
        chunks.append(arr.tobytes())
        offset += len(chunks[-1])
    with open(os.path.join(out_dir, TENSORS_BIN), "wb") as fh:
        fh.write(b"".join(chunks))
    with open(os.path.join(out_dir, TENSORS_INDEX), "w", encoding="utf-8") as fh:
        json.dump(index, fh, indent=2)


def load_tensor_blob(in_dir) -> dict:
    with open(os.path.join(in_dir, TENSORS_INDEX), "r", encoding="utf-8") as fh:
        index = json.load(fh)
    with open(os.path.join(in_dir, TENSORS_BIN), "rb") as fh:
        blob = fh.read()
    state = {}
    for name, entry in index.items():
        if entry["dtype"] != "f32":
            raise ValueError(f"unsupported dtype {entry['dtype']!r} for tensor {name!r}")
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(
            blob, dtype="<f4", count=count, offset=entry["byte_offset"]
        ).reshape(shape)
        state[name] = arr.copy()
    return state


def save_metadata(out_dir, metadata: dict) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, METADATA), "w", encoding="utf-8") as fh:
        json.dump(metadata, fh, indent=2, sort_keys=True)


def load_metadata(in_dir) -> dict:
    path = os.path.join(in_dir, METADATA)
    if not os.path.exists(path):
        raise FileNotFoundError(f"not a checkpoint directory (missing {path})")
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _load_state_into(module: torch.nn.Module, in_dir) -> None:
    state = {k: torch.from_numpy(v) for k, v in load_tensor_blob(in_dir).items()}
    module.load_state_dict(state)


def save_generator_checkpoint(
    out_dir,
    model: ConditionalUNet,
    schedule: NoiseSchedule,
    sampler: SamplerConfig | None = None,
    extra: dict | None = None,
) -> None:
    metadata = {
        "kind": "generator",
        "version": __version__,
        "unet": model.config.to_metadata(),
        "vocabulary": model.vocab.to_metadata(),
        "schedule": schedule_to_metadata(schedule),
        "sampler": (sampler or SamplerConfig()).to_metadata(),
    }
    if extra:
        metadata["extra"] = extra
    save_metadata(out_dir, metadata)
    save_tensor_blob(out_dir, model.state_dict())


def load_generator_checkpoint(in_dir):
    """Returns (model, schedule, sampler_config, metadata)."""
    metadata = load_metadata(in_dir)
    if metadata.get("kind") != "generator":
        raise ValueError(f"{in_dir} is not a generator checkpoint")
    vocab = ConditionVocabulary.from_metadata(metadata["vocabulary"])
    model = ConditionalUNet(UNetConfig.from_metadata(metadata["unet"]), vocab)
    _load_state_into(model, in_dir)
    model.eval()
    schedule = schedule_from_metadata(metadata["schedule"])
    sampler = SamplerConfig.from_metadata(metadata.get("sampler", {}))
    return model, schedule, sampler, metadata


def save_filter_checkpoint(out_dir, model: FilterModel, extra: dict | None = None) -> None:
    metadata = {
        "kind": "quality-filter",
        "version": __version__,
        "filter": model.config.to_metadata(),
        "threshold": model.threshold,
        "report": model.report,
    }
    if extra:
        metadata["extra"] = extra
    save_metadata(out_dir, metadata)
    save_tensor_blob(out_dir, model.net.state_dict())


def load_filter_checkpoint(in_dir) -> FilterModel:
    metadata = load_metadata(in_dir)
    if metadata.get("kind") != "quality-filter":
        raise ValueError(f"{in_dir} is not a quality-filter checkpoint")
    config = FilterConfig.from_metadata(metadata["filter"])
    net = QualityFilterNet(config)
    _load_state_into(net, in_dir)
    net.eval()
    return FilterModel(
        net=net,
        config=config,
        threshold=metadata.get("threshold", 0.5),
        report=metadata.get("report", {}),
    )


def save_recognizer_checkpoint(out_dir, model: RecognizerModel, extra: dict | None = None) -> None:
    metadata = {
        "kind": "recognizer",
        "version": __version__,
        "recognizer": model.config.to_metadata(),
        "report": model.report,
    }
    if extra:
        metadata["extra"] = extra
    save_metadata(out_dir, metadata)
    save_tensor_blob(out_dir, model.net.state_dict())


def load_recognizer_checkpoint(in_dir) -> RecognizerModel:
    metadata = load_metadata(in_dir)
    if metadata.get("kind") != "recognizer":
        raise ValueError(f"{in_dir} is not a recognizer checkpoint")
    config = RecognizerConfig.from_metadata(metadata["recognizer"])
    net = SmallConvRecognizer(config)
    _load_state_into(net, in_dir)
    net.eval()
    return RecognizerModel(net=net, config=config, report=metadata.get("report", {}))
