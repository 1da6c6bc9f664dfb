"""Dataset manifests and image preprocessing.

A manifest is a JSON-lines file, one record per image:

    {"path": ..., "class": <name string>, "distance_m": <number>, "split": "train"|"test"}

Paths are stored relative to the manifest file when possible and resolved
on load.  Extra keys are preserved in Sample.meta (the toy renderer stores
its ground truth there).

Preprocessing follows detect -> crop -> enhance -> resize -> normalize.
Detector and enhancer are pluggable callables; the defaults here are the
full-image box and the identity enhancer.  The toy-world oracle detector
lives in `toyworld` and is wired in by the pipeline configs.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol

import numpy as np
import torch
from PIL import Image

from .conditioning import ConditionVocabulary

logger = logging.getLogger(__name__)

Box = tuple  # (left, top, right, bottom), right/bottom exclusive


class Detector(Protocol):
    def __call__(self, image: np.ndarray) -> Optional[Box]: ...


class Enhancer(Protocol):
    def __call__(self, image: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class Sample:
    path: str
    class_id: int
    distance_m: float
    split: str
    meta: dict = field(default_factory=dict, compare=False)


@dataclass
class DatasetManifest:
    samples: list
    vocab: ConditionVocabulary

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def subset(self, split: str | None = None, indices=None) -> "DatasetManifest":
        samples = self.samples
        if split is not None:
            samples = [s for s in samples if s.split == split]
        if indices is not None:
            samples = [samples[i] for i in indices]
        return DatasetManifest(samples=samples, vocab=self.vocab)

    def class_counts(self) -> np.ndarray:
        counts = np.zeros(self.vocab.num_classes, dtype=np.int64)
        for s in self.samples:
            counts[s.class_id] += 1
        return counts


def save_manifest(manifest: DatasetManifest, path) -> None:
    path = os.fspath(path)
    base = os.path.dirname(os.path.abspath(path))
    with open(path, "w", encoding="utf-8") as fh:
        for s in manifest.samples:
            rec = {
                "path": os.path.relpath(os.path.abspath(s.path), base),
                "class": manifest.vocab.class_name(s.class_id),
                "distance_m": s.distance_m,
                "split": s.split,
            }
            rec.update(s.meta)
            fh.write(json.dumps(rec) + "\n")


def load_manifest(path, vocab: ConditionVocabulary, check_paths: bool = True) -> DatasetManifest:
    """Parse and validate a manifest; malformed records report their line number."""
    path = os.fspath(path)
    base = os.path.dirname(os.path.abspath(path))
    samples = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: invalid JSON ({exc})") from None
            try:
                name = rec.pop("path")
                class_name = rec.pop("class")
                distance = float(rec.pop("distance_m"))
                split = rec.pop("split")
            except KeyError as exc:
                raise ValueError(f"{path}:{lineno}: missing field {exc}") from None
            try:
                class_id = vocab.class_id(class_name)
            except ValueError:
                raise ValueError(f"{path}:{lineno}: unknown class {class_name!r}") from None
            if not vocab.distance_min <= distance <= vocab.distance_max:
                raise ValueError(
                    f"{path}:{lineno}: distance {distance} outside "
                    f"[{vocab.distance_min}, {vocab.distance_max}]"
                )
            if split not in ("train", "test"):
                raise ValueError(f"{path}:{lineno}: unknown split {split!r}")
            abs_path = os.path.normpath(os.path.join(base, name))
            if check_paths and not os.path.exists(abs_path):
                raise ValueError(f"{path}:{lineno}: image file not found: {abs_path}")
            samples.append(
                Sample(path=abs_path, class_id=class_id, distance_m=distance, split=split, meta=rec)
            )
    return DatasetManifest(samples=samples, vocab=vocab)


def load_image(path) -> np.ndarray:
    """Read an image file as (H, W, 3) uint8."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def image_to_array(image: Image.Image | np.ndarray) -> np.ndarray:
    """(H, W, 3) uint8 -> (3, H, W) uint8."""
    arr = np.asarray(image, dtype=np.uint8)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got {arr.shape}")
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def array_to_image(chw: np.ndarray) -> Image.Image:
    """(3, H, W) uint8 -> PIL image."""
    arr = np.asarray(chw, dtype=np.uint8)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ValueError(f"expected (3, H, W) array, got {arr.shape}")
    return Image.fromarray(arr.transpose(1, 2, 0))


def normalize(image) -> torch.Tensor:
    """Affine [0, 255] -> [-1, 1] on a (C, H, W) 8-bit image."""
    arr = np.asarray(image, dtype=np.float32)
    return torch.from_numpy(arr / 127.5 - 1.0)


def denormalize(latent: torch.Tensor) -> np.ndarray:
    """Inverse of normalize: clamp to [-1, 1], map back, round half-to-even."""
    arr = latent.detach().cpu().numpy().astype(np.float64)
    arr = np.clip(arr, -1.0, 1.0)
    return np.rint((arr + 1.0) * 127.5).astype(np.uint8)


def full_image_detector(image: np.ndarray) -> Box:
    h, w = image.shape[:2]
    return (0, 0, w, h)


def identity_enhancer(image: np.ndarray) -> np.ndarray:
    return image


def median_enhancer(image: np.ndarray) -> np.ndarray:
    """3x3 median filter per channel; the reference quality enhancer."""
    from scipy.ndimage import median_filter

    return median_filter(image, size=(3, 3, 1))


def resize_image(image: np.ndarray, target_size: int | tuple) -> np.ndarray:
    if isinstance(target_size, int):
        target_size = (target_size, target_size)
    im = Image.fromarray(image).resize((target_size[1], target_size[0]), Image.BILINEAR)
    return np.asarray(im, dtype=np.uint8)


def preprocess(
    sample: Sample,
    detector: Callable = full_image_detector,
    enhancer: Callable = identity_enhancer,
    target_size: int | tuple = 64,
) -> torch.Tensor | None:
    """detect -> crop -> enhance -> resize -> normalize.

    Returns None (with a warning) when the detector finds nothing.
    """
    image = load_image(sample.path)
    box = detector(image)
    if box is None or box[2] <= box[0] or box[3] <= box[1]:
        logger.warning("detector found no object in %s; sample skipped", sample.path)
        return None
    left, top, right, bottom = box
    h, w = image.shape[:2]
    if not (0 <= left < right <= w and 0 <= top < bottom <= h):
        raise ValueError(f"detector box {box} outside image bounds {w}x{h}")
    crop = image[top:bottom, left:right]
    crop = enhancer(crop)
    if crop.ndim != 3 or crop.shape[2] != image.shape[2]:
        raise ValueError("enhancer must preserve channel count")
    crop = resize_image(crop, target_size)
    return normalize(image_to_array(crop))


def load_split_tensors(
    manifest: DatasetManifest,
    split: str | None = None,
    detector: Callable = full_image_detector,
    enhancer: Callable = identity_enhancer,
    target_size: int | tuple = 64,
):
    """Preprocess every sample of a split into (images, class_ids, distances)."""
    images, class_ids, distances = [], [], []
    for s in manifest:
        if split is not None and s.split != split:
            continue
        x = preprocess(s, detector=detector, enhancer=enhancer, target_size=target_size)
        if x is None:
            continue
        images.append(x)
        class_ids.append(s.class_id)
        distances.append(s.distance_m)
    if not images:
        raise ValueError(f"no usable samples in split {split!r}")
    return torch.stack(images), np.asarray(class_ids), np.asarray(distances)
