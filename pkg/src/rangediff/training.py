"""Training loop for the conditional generator.

Loads a manifest, preprocesses every image once, and runs noise-prediction
training with joint condition dropout for guidance.  Deterministic given
the config seed.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np
import torch

from .conditioning import ConditionPair
from .datapipe import (
    DatasetManifest,
    full_image_detector,
    identity_enhancer,
    load_split_tensors,
    median_enhancer,
)
from .diffusion import training_loss_batch
from .schedule import NoiseSchedule, build_cosine_schedule, build_linear_schedule
from .unet import ConditionalUNet, UNetConfig

logger = logging.getLogger(__name__)


@dataclass
class GeneratorTrainConfig:
    image_size: int = 64
    base_width: int = 32
    depth: int = 2
    embedding_dim: int = 64
    epochs: int = 30
    batch_size: int = 32
    lr: float = 2e-4
    p_drop: float = 0.1
    dropout_mode: str = "joint"
    schedule_type: str = "linear"
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    cosine_offset: float = 0.008
    detector: str = "full"      # "full" | "oracle"
    enhancer: str = "identity"  # "identity" | "median"
    seed: int = 0
    log_every: int = 100

    def build_schedule(self) -> NoiseSchedule:
        if self.schedule_type == "linear":
            return build_linear_schedule(self.T, self.beta_start, self.beta_end)
        if self.schedule_type == "cosine":
            return build_cosine_schedule(self.T, self.cosine_offset)
        raise ValueError(f"unknown schedule type {self.schedule_type!r}")

    def build_unet_config(self) -> UNetConfig:
        return UNetConfig(
            in_channels=3,
            base_width=self.base_width,
            depth=self.depth,
            embedding_dim=self.embedding_dim,
        )


def resolve_detector(name: str):
    if name == "full":
        return full_image_detector
    if name == "oracle":
        from .toyworld import OracleShapeDetector

        return OracleShapeDetector()
    raise ValueError(f"unknown detector {name!r}")


def resolve_enhancer(name: str):
    if name == "identity":
        return identity_enhancer
    if name == "median":
        return median_enhancer
    raise ValueError(f"unknown enhancer {name!r}")


def manifest_conditions(manifest: DatasetManifest, class_ids, distances) -> list:
    vocab = manifest.vocab
    return [
        ConditionPair(int(c), vocab.distance_token(float(d)))
        for c, d in zip(class_ids, distances)
    ]


def train_generator(manifest: DatasetManifest, config: GeneratorTrainConfig):
    """Fit the conditional denoiser; returns (model, schedule, history)."""
    from .conditioning import drop_conditions

    images, class_ids, distances = load_split_tensors(
        manifest,
        split="train",
        detector=resolve_detector(config.detector),
        enhancer=resolve_enhancer(config.enhancer),
        target_size=config.image_size,
    )
    conditions = manifest_conditions(manifest, class_ids, distances)
    schedule = config.build_schedule()

    torch.manual_seed(config.seed)
    model = ConditionalUNet(config.build_unet_config(), manifest.vocab)
    opt = torch.optim.Adam(model.parameters(), lr=config.lr)
    rng = torch.Generator().manual_seed(config.seed + 1)

    n = len(images)
    losses = []
    epoch_means = []
    started = time.time()
    model.train()
    for epoch in range(config.epochs):
        order = torch.randperm(n, generator=rng)
        epoch_losses = []
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            batch_conditions = [
                drop_conditions(conditions[i], config.p_drop, rng, mode=config.dropout_mode)
                for i in idx.tolist()
            ]
            loss = training_loss_batch(model, images[idx], batch_conditions, rng, schedule)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(float(loss.detach()))
            epoch_losses.append(losses[-1])
            if config.log_every and len(losses) % config.log_every == 0:
                logger.info(
                    "step %d loss %.4f (%.1fs)", len(losses), losses[-1], time.time() - started
                )
        epoch_means.append(float(np.mean(epoch_losses)))
    model.eval()
    history = {
        "batch_losses": losses,
        "epoch_means": epoch_means,
        "initial_loss": epoch_means[0],
        "final_loss": epoch_means[-1],
        "n_train": n,
        "train_seconds": time.time() - started,
    }
    return model, schedule, history
