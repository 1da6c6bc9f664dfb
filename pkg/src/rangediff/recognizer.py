"""Reference downstream recognizer: a small convolutional classifier.

Stands in for heavier recognition models in the experiment harness.  The
interface is the contract: train on a labeled image stack, predict a class
distribution per image.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn


@dataclass
class RecognizerConfig:
    num_classes: int = 6
    image_size: int = 32
    width: int = 32
    lr: float = 1e-3
    epochs: int = 10
    batch_size: int = 64

    def to_metadata(self) -> dict:
        return {
            "num_classes": self.num_classes,
            "image_size": self.image_size,
            "width": self.width,
        }

    @staticmethod
    def from_metadata(meta: dict) -> "RecognizerConfig":
        return RecognizerConfig(
            num_classes=meta["num_classes"],
            image_size=meta["image_size"],
            width=meta["width"],
        )


class SmallConvRecognizer(nn.Module):
    def __init__(self, config: RecognizerConfig):
        super().__init__()
        w = config.width
        self.net = nn.Sequential(
            nn.Conv2d(3, w, 3, stride=2, padding=1),
            nn.GroupNorm(min(8, w), w),
            nn.SiLU(),
            nn.Conv2d(w, 2 * w, 3, stride=2, padding=1),
            nn.GroupNorm(min(8, 2 * w), 2 * w),
            nn.SiLU(),
            nn.Conv2d(2 * w, 2 * w, 3, stride=2, padding=1),
            nn.GroupNorm(min(8, 2 * w), 2 * w),
            nn.SiLU(),
        )
        self.head = nn.Linear(2 * w, config.num_classes)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.net(x).mean(dim=(2, 3)))


@dataclass
class RecognizerModel:
    net: SmallConvRecognizer
    config: RecognizerConfig
    report: dict = field(default_factory=dict, compare=False)

    def predict(self, image: torch.Tensor) -> np.ndarray:
        """Class distribution for one (C, H, W) image in [-1, 1]."""
        self.net.eval()
        with torch.no_grad():
            logits = self.net(image.unsqueeze(0))
            return torch.softmax(logits, dim=1)[0].numpy().astype(np.float64)

    def predict_batch(self, images: torch.Tensor) -> np.ndarray:
        self.net.eval()
        with torch.no_grad():
            return (
                torch.softmax(self.net(images), dim=1).numpy().astype(np.float64)
            )


def train_recognizer(
    images: torch.Tensor,
    labels: np.ndarray,
    config: RecognizerConfig,
    seed: int = 0,
) -> RecognizerModel:
    """Supervised cross-entropy training; deterministic per seed."""
    labels = np.asarray(labels)
    present = np.unique(labels)
    missing = set(range(config.num_classes)) - set(int(c) for c in present)
    if missing:
        raise ValueError(f"training data missing classes {sorted(missing)}")
    y = torch.from_numpy(labels.astype(np.int64))

    torch.manual_seed(seed)
    net = SmallConvRecognizer(config)
    opt = torch.optim.Adam(net.parameters(), lr=config.lr)
    rng = torch.Generator().manual_seed(seed)
    net.train()
    last_loss = float("nan")
    for _ in range(config.epochs):
        order = torch.randperm(len(images), generator=rng)
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            loss = F.cross_entropy(net(images[idx]), y[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
            last_loss = float(loss.detach())
    return RecognizerModel(net=net, config=config, report={"final_loss": last_loss})


def evaluate_recognizer(model: RecognizerModel, images: torch.Tensor, labels: np.ndarray):
    """Returns (accuracy, confusion matrix); confusion rows are true classes."""
    labels = np.asarray(labels)
    m = model.config.num_classes
    confusion = np.zeros((m, m), dtype=np.int64)
    model.net.eval()
    with torch.no_grad():
        for start in range(0, len(images), 256):
            batch = images[start : start + 256]
            pred = model.net(batch).argmax(dim=1).numpy()
            for true, hat in zip(labels[start : start + 256], pred):
                confusion[int(true), int(hat)] += 1
    accuracy = float(np.trace(confusion) / max(1, confusion.sum()))
    return accuracy, confusion
