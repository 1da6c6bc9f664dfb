"""Conditional U-Net noise predictor.

Shape-preserving map (x_t, t, condition) -> predicted noise.  Contracting
path, bottleneck, and expansive path with skip connections consumed by
channel concatenation.  The conditioning vector (sinusoidal time embedding
plus learned class and distance embeddings, summed once per forward) is
linearly projected inside every double-conv block and added channel-wise.

Layer list per level, kept in sync with the parameter-count test:

    stem:        Conv3x3(in_ch -> ch[0])
    down i:      Conv3x3 + GroupNorm + act, +emb, Conv3x3 + GroupNorm + act,
                 then Conv3x3 stride 2 (downsample)
    bottleneck:  same double-conv block at ch[depth]
    up i:        nearest-2x upsample + Conv3x3, concat skip,
                 double-conv block at ch[i]
    head:        GroupNorm + act + Conv3x3(ch[0] -> in_ch), zero-initialized
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol, Sequence

import torch
import torch.nn.functional as F
from torch import nn

from .conditioning import ConditionEmbedder, ConditionPair, ConditionVocabulary, sinusoidal_time_embedding

_ACTIVATIONS = {"silu": F.silu, "relu": F.relu, "gelu": F.gelu}


class Denoiser(Protocol):
    """Callable noise predictor: (x_t, t, conditions) -> eps_hat, same shape as x_t."""

    def __call__(self, x_t: torch.Tensor, t, conditions) -> torch.Tensor: ...


@dataclass
class UNetConfig:
    in_channels: int = 3
    base_width: int = 32
    depth: int = 3
    channel_multipliers: tuple = ()  # depth+1 entries (levels + bottleneck)
    embedding_dim: int = 128
    norm_group_size: int = 8
    activation: str = "silu"
    attention: bool = False  # reserved; not implemented at desk scale

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")
        if not self.channel_multipliers:
            mults = tuple(2**i for i in range(self.depth))
            self.channel_multipliers = mults + (mults[-1],)
        if len(self.channel_multipliers) != self.depth + 1:
            raise ValueError(
                f"need depth+1={self.depth + 1} channel multipliers, "
                f"got {len(self.channel_multipliers)}"
            )
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.attention:
            raise NotImplementedError("attention blocks are reserved but not implemented")

    @property
    def channels(self) -> tuple:
        return tuple(self.base_width * m for m in self.channel_multipliers)

    def to_metadata(self) -> dict:
        return {
            "in_channels": self.in_channels,
            "base_width": self.base_width,
            "depth": self.depth,
            "channel_multipliers": list(self.channel_multipliers),
            "embedding_dim": self.embedding_dim,
            "norm_group_size": self.norm_group_size,
            "activation": self.activation,
        }

    @staticmethod
    def from_metadata(meta: dict) -> "UNetConfig":
        return UNetConfig(
            in_channels=meta["in_channels"],
            base_width=meta["base_width"],
            depth=meta["depth"],
            channel_multipliers=tuple(meta["channel_multipliers"]),
            embedding_dim=meta["embedding_dim"],
            norm_group_size=meta.get("norm_group_size", 8),
            activation=meta.get("activation", "silu"),
        )


def _num_groups(channels: int, group_size: int) -> int:
    # largest divisor of `channels` not exceeding the configured group size
    for g in range(min(group_size, channels), 0, -1):
        if channels % g == 0:
            return g
    return 1


class DoubleConvBlock(nn.Module):
    """conv-norm-act, conditioning add, conv-norm-act."""

    def __init__(self, c_in: int, c_out: int, emb_dim: int, group_size: int, act: str):
        super().__init__()
        g = _num_groups(c_out, group_size)
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.norm1 = nn.GroupNorm(g, c_out)
        self.emb_proj = nn.Linear(emb_dim, c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.norm2 = nn.GroupNorm(g, c_out)
        self.act = _ACTIVATIONS[act]

    def forward(self, x: torch.Tensor, emb: torch.Tensor) -> torch.Tensor:
        h = self.act(self.norm1(self.conv1(x)))
        h = h + self.emb_proj(emb)[:, :, None, None]
        return self.act(self.norm2(self.conv2(h)))


class ConditionalUNet(nn.Module):
    """U-Net epsilon-predictor with per-block additive conditioning."""

    def __init__(self, config: UNetConfig, vocab: ConditionVocabulary):
        super().__init__()
        self.config = config
        self.vocab = vocab
        self.embedder = ConditionEmbedder(vocab, config.embedding_dim)
        # test knob: scales every skip tensor before concatenation
        self.skip_gain = 1.0

        ch = config.channels
        gs, act, ed = config.norm_group_size, config.activation, config.embedding_dim

        self.stem = nn.Conv2d(config.in_channels, ch[0], 3, padding=1)
        self.down_blocks = nn.ModuleList()
        self.downsamples = nn.ModuleList()
        c_prev = ch[0]
        for i in range(config.depth):
            self.down_blocks.append(DoubleConvBlock(c_prev, ch[i], ed, gs, act))
            self.downsamples.append(nn.Conv2d(ch[i], ch[i], 3, stride=2, padding=1))
            c_prev = ch[i]
        self.bottleneck = DoubleConvBlock(ch[config.depth - 1], ch[config.depth], ed, gs, act)

        self.up_convs = nn.ModuleList()
        self.up_blocks = nn.ModuleList()
        c_above = ch[config.depth]
        for i in reversed(range(config.depth)):
            self.up_convs.append(nn.Conv2d(c_above, ch[i], 3, padding=1))
            self.up_blocks.append(DoubleConvBlock(2 * ch[i], ch[i], ed, gs, act))
            c_above = ch[i]
        self.head_norm = nn.GroupNorm(_num_groups(ch[0], gs), ch[0])
        self.head_conv = nn.Conv2d(ch[0], config.in_channels, 3, padding=1)

        self._init_weights()

    @property
    def num_skips(self) -> int:
        return len(self.up_blocks)

    def _init_weights(self):
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.kaiming_normal_(m.weight, nonlinearity="relu")
                nn.init.zeros_(m.bias)
        # untrained net predicts eps_hat ~ 0 for stable early training
        nn.init.zeros_(self.head_conv.weight)
        nn.init.zeros_(self.head_conv.bias)

    def conditioning_vector(self, t, conditions, batch: int, dtype, device) -> torch.Tensor:
        t_emb = sinusoidal_time_embedding(t, self.config.embedding_dim, dtype=dtype)
        if t_emb.dim() == 1:
            t_emb = t_emb.expand(batch, -1)
        o_emb, d_emb = self.embedder(conditions)
        return t_emb.to(device) + o_emb.to(dtype) + d_emb.to(dtype)

    def forward(self, x_t: torch.Tensor, t, conditions) -> torch.Tensor:
        single = x_t.dim() == 3
        if single:
            x_t = x_t.unsqueeze(0)
        if isinstance(conditions, ConditionPair):
            conditions = [conditions] * x_t.shape[0]
        if len(conditions) != x_t.shape[0]:
            raise ValueError(f"{len(conditions)} conditions for batch of {x_t.shape[0]}")
        h, w = x_t.shape[-2:]
        div = 2**self.config.depth
        if h % div or w % div:
            raise ValueError(f"spatial size {h}x{w} not divisible by 2^depth={div}")

        emb = self.conditioning_vector(t, conditions, x_t.shape[0], x_t.dtype, x_t.device)

        h = self.stem(x_t)
        skips = []
        for block, down in zip(self.down_blocks, self.downsamples):
            h = block(h, emb)
            skips.append(h)
            h = down(h)
        h = self.bottleneck(h, emb)
        for conv, block in zip(self.up_convs, self.up_blocks):
            h = conv(F.interpolate(h, scale_factor=2, mode="nearest"))
            skip = skips.pop()
            if self.skip_gain != 1.0:
                skip = skip * self.skip_gain
            h = block(torch.cat([skip, h], dim=1), emb)
        out = self.head_conv(_ACTIVATIONS[self.config.activation](self.head_norm(h)))
        return out.squeeze(0) if single else out


def build_unet(config: UNetConfig, vocab: ConditionVocabulary) -> ConditionalUNet:
    return ConditionalUNet(config, vocab)


def denoise(model, x_t: torch.Tensor, t: int, condition: ConditionPair) -> torch.Tensor:
    """Single-image noise prediction for a (C, H, W) tensor."""
    return model(x_t, t, condition)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
