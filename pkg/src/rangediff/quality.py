"""Pass/fail quality filter for generated images.

A residual classifier scores each image with a pass probability in [0, 1];
images scoring below the decision threshold are dropped.  The trunk is a
learned linear patch-embedding stem followed by residual blocks
(conv-norm-act-conv-norm plus identity shortcut; strided shortcut conv when
the shape changes), global average pooling, and a single logit head.

Labels travel as a JSON-lines manifest, one record per image:

    {"path": ..., "verdict": "pass"|"fail", "reason": <optional text>}
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import nn


@dataclass(frozen=True)
class QualityLabel:
    verdict: str  # "pass" | "fail"
    reason: str | None = None

    def __post_init__(self):
        if self.verdict not in ("pass", "fail"):
            raise ValueError(f"verdict must be 'pass' or 'fail', got {self.verdict!r}")

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"


def write_labels(records, path) -> None:
    """records: iterable of (image_path, QualityLabel)."""
    with open(path, "w", encoding="utf-8") as fh:
        for image_path, label in records:
            rec = {"path": os.fspath(image_path), "verdict": label.verdict}
            if label.reason:
                rec["reason"] = label.reason
            fh.write(json.dumps(rec) + "\n")


def read_labels(path) -> list:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                out.append((rec["path"], QualityLabel(rec["verdict"], rec.get("reason"))))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad label record ({exc})") from None
    return out


@dataclass
class FilterConfig:
    num_blocks: int = 8          # reference model uses 32; desk default 8
    width: int = 32
    patch_size: int = 2
    input_size: int = 32
    threshold: float = 0.5
    lr: float = 1e-3
    epochs: int = 8
    batch_size: int = 64
    val_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.num_blocks < 1:
            raise ValueError("need at least one residual block")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must be in [0, 1]")

    def to_metadata(self) -> dict:
        return {
            "num_blocks": self.num_blocks,
            "width": self.width,
            "patch_size": self.patch_size,
            "input_size": self.input_size,
            "threshold": self.threshold,
        }

    @staticmethod
    def from_metadata(meta: dict) -> "FilterConfig":
        return FilterConfig(
            num_blocks=meta["num_blocks"],
            width=meta["width"],
            patch_size=meta["patch_size"],
            input_size=meta["input_size"],
            threshold=meta.get("threshold", 0.5),
        )


class ResidualBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(c_in, c_out, 3, stride=stride, padding=1)
        self.norm1 = nn.GroupNorm(min(8, c_out), c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.norm2 = nn.GroupNorm(min(8, c_out), c_out)
        if stride != 1 or c_in != c_out:
            self.shortcut = nn.Conv2d(c_in, c_out, 1, stride=stride)
        else:
            self.shortcut = nn.Identity()

    def forward(self, x):
        h = F.silu(self.norm1(self.conv1(x)))
        h = self.norm2(self.conv2(h))
        return F.silu(h + self.shortcut(x))


class QualityFilterNet(nn.Module):
    """Patch-embedding stem, residual trunk, single pass-logit head."""

    def __init__(self, config: FilterConfig):
        super().__init__()
        self.config = config
        w = config.width
        self.patch_embed = nn.Conv2d(3, w, config.patch_size, stride=config.patch_size)
        blocks = []
        half = config.num_blocks // 2
        for i in range(config.num_blocks):
            if i == half and config.num_blocks > 1:
                blocks.append(ResidualBlock(w, 2 * w, stride=2))
                w = 2 * w
            else:
                blocks.append(ResidualBlock(w, w))
        self.trunk = nn.Sequential(*blocks)
        self.head = nn.Linear(w, 1)

    def features(self, x: torch.Tensor) -> torch.Tensor:
        h = self.trunk(self.patch_embed(x))
        return h.mean(dim=(2, 3))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.features(x)).squeeze(-1)


@dataclass
class FilterModel:
    net: QualityFilterNet
    config: FilterConfig
    threshold: float = 0.5
    report: dict = field(default_factory=dict, compare=False)


def _check_resolution(model: FilterModel, image: torch.Tensor) -> None:
    if image.shape[-2:] != (model.config.input_size, model.config.input_size):
        raise ValueError(
            f"image resolution {tuple(image.shape[-2:])} does not match "
            f"filter input size {model.config.input_size}"
        )


def score(model: FilterModel, image: torch.Tensor) -> float:
    """Pass probability in [0, 1] for one (C, H, W) image."""
    _check_resolution(model, image)
    model.net.eval()
    with torch.no_grad():
        return float(torch.sigmoid(model.net(image.unsqueeze(0)))[0])


def score_batch(model: FilterModel, images) -> torch.Tensor:
    model.net.eval()
    out = []
    with torch.no_grad():
        for img in images:
            _check_resolution(model, img)
            out.append(torch.sigmoid(model.net(img.unsqueeze(0)))[0])
    return torch.stack(out) if out else torch.empty(0)


def filter_batch(model: FilterModel, images, tau: float) -> tuple:
    """Partition images into (kept, dropped) by score >= tau, order preserved."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must be in [0, 1], got {tau}")
    kept, dropped = [], []
    for img in images:
        if score(model, img) >= tau:
            kept.append(img)
        else:
            dropped.append(img)
    return kept, dropped


def train_filter(labeled, config: FilterConfig) -> FilterModel:
    """Binary cross-entropy training with a held-out split.

    labeled: sequence of ((C, H, W) tensor in [-1, 1], QualityLabel).
    Deterministic under config.seed.  The held-out accuracy lands in
    model.report.
    """
    if len(labeled) == 0:
        raise ValueError("empty label set")
    ys = torch.tensor([1.0 if lab.passed else 0.0 for _, lab in labeled])
    if ys.min() == ys.max():
        raise ValueError("single-class label set; need both pass and fail examples")
    xs = torch.stack([img for img, _ in labeled])
    if xs.shape[-2:] != (config.input_size, config.input_size):
        raise ValueError(
            f"images are {tuple(xs.shape[-2:])} but filter expects {config.input_size}"
        )

    rng = torch.Generator().manual_seed(config.seed)
    perm = torch.randperm(len(labeled), generator=rng)
    n_val = max(1, int(len(labeled) * config.val_fraction))
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    if len(train_idx) == 0 or ys[train_idx].min() == ys[train_idx].max():
        raise ValueError("training split degenerate; provide more labeled data")

    torch.manual_seed(config.seed)
    net = QualityFilterNet(config)
    opt = torch.optim.Adam(net.parameters(), lr=config.lr)
    net.train()
    for _ in range(config.epochs):
        order = train_idx[torch.randperm(len(train_idx), generator=rng)]
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            logits = net(xs[idx])
            loss = F.binary_cross_entropy_with_logits(logits, ys[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()

    net.eval()
    with torch.no_grad():
        val_logits = net(xs[val_idx])
        val_acc = float(((val_logits > 0) == (ys[val_idx] > 0.5)).float().mean())
    report = {
        "holdout_accuracy": val_acc,
        "n_train": int(len(train_idx)),
        "n_holdout": int(len(val_idx)),
    }
    return FilterModel(net=net, config=config, threshold=config.threshold, report=report)
