"""Condition vocabulary, embeddings, and guidance-dropout.

Generation is steered by a (class, distance) pair.  Each axis has a reserved
null token used for unconditional prediction during guidance training and
sampling.  Note the distinction for the gesture vocabulary: "null-gesture"
is a *real* class (the subject exhibits no gesture); the null *token* is the
extra reserved row after all real classes.

The per-step conditioning vector handed to the denoiser is the plain sum
t_emb + class_emb + distance_emb, where the time embedding is fixed
sinusoidal and the two tables are learned.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

GESTURE_CLASS_NAMES = (
    "pointing",
    "thumbs-up",
    "thumbs-down",
    "beckoning",
    "stop",
    "null-gesture",
)

DISTANCE_MIN_M = 4
DISTANCE_MAX_M = 25


@dataclass(frozen=True)
class ConditionVocabulary:
    """Class names plus integer-meter distance bins, with one null token per axis."""

    class_names: tuple = GESTURE_CLASS_NAMES
    distance_min: int = DISTANCE_MIN_M
    distance_max: int = DISTANCE_MAX_M

    def __post_init__(self):
        if len(self.class_names) != len(set(self.class_names)):
            raise ValueError("class names must be distinct")
        if not self.class_names:
            raise ValueError("vocabulary needs at least one class")
        if self.distance_max < self.distance_min:
            raise ValueError("distance_max must be >= distance_min")

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def num_distances(self) -> int:
        return self.distance_max - self.distance_min + 1

    @property
    def null_class_token(self) -> int:
        return self.num_classes

    @property
    def null_distance_token(self) -> int:
        return self.num_distances

    def class_id(self, name: str) -> int:
        try:
            return self.class_names.index(name)
        except ValueError:
            raise ValueError(f"unknown class {name!r}") from None

    def class_name(self, class_id: int) -> str:
        if not 0 <= class_id < self.num_classes:
            raise ValueError(f"class id {class_id} outside [0, {self.num_classes - 1}]")
        return self.class_names[class_id]

    def distance_token(self, meters: float) -> int:
        """Bin a real-valued distance to its integer-meter token."""
        if not self.distance_min <= meters <= self.distance_max:
            raise ValueError(
                f"distance {meters} outside [{self.distance_min}, {self.distance_max}]"
            )
        return round(meters) - self.distance_min

    def token_distance(self, token: int) -> int:
        if not 0 <= token < self.num_distances:
            raise ValueError(f"distance token {token} outside [0, {self.num_distances - 1}]")
        return token + self.distance_min

    def to_metadata(self) -> dict:
        return {
            "classes": {name: i for i, name in enumerate(self.class_names)},
            "distance_min": self.distance_min,
            "distance_max": self.distance_max,
        }

    @staticmethod
    def from_metadata(meta: dict) -> "ConditionVocabulary":
        by_id = sorted(meta["classes"].items(), key=lambda kv: kv[1])
        return ConditionVocabulary(
            class_names=tuple(name for name, _ in by_id),
            distance_min=meta["distance_min"],
            distance_max=meta["distance_max"],
        )


@dataclass(frozen=True)
class ConditionPair:
    """Class and distance tokens; None on an axis selects that axis's null token."""

    class_token: int | None
    distance_token: int | None

    @staticmethod
    def null() -> "ConditionPair":
        return ConditionPair(class_token=None, distance_token=None)

    @property
    def is_fully_null(self) -> bool:
        return self.class_token is None and self.distance_token is None

    @property
    def is_fully_specified(self) -> bool:
        return self.class_token is not None and self.distance_token is not None

    def validate(self, vocab: ConditionVocabulary) -> None:
        if self.class_token is not None and not 0 <= self.class_token < vocab.num_classes:
            raise ValueError(f"class token {self.class_token} outside vocabulary")
        if self.distance_token is not None and not 0 <= self.distance_token < vocab.num_distances:
            raise ValueError(f"distance token {self.distance_token} outside vocabulary")


def condition_for(vocab: ConditionVocabulary, class_name: str, distance_m: float) -> ConditionPair:
    return ConditionPair(vocab.class_id(class_name), vocab.distance_token(distance_m))


def sinusoidal_time_embedding(t, dim: int, dtype=torch.float32) -> torch.Tensor:
    """Fixed sinusoidal embedding of a timestep.

    Entry 2k is sin(t * w_k) and entry 2k+1 is cos(t * w_k) with
    w_k = 10000^(-2k/dim).  Accepts an int or a 1-d tensor of ints and
    returns shape (dim,) or (batch, dim) accordingly.
    """
    if dim % 2 != 0 or dim <= 0:
        raise ValueError(f"embedding dim must be even and positive, got {dim}")
    scalar = not torch.is_tensor(t) or t.dim() == 0
    tt = torch.as_tensor(t, dtype=torch.float64).reshape(-1, 1)
    k = torch.arange(dim // 2, dtype=torch.float64)
    omega = torch.pow(10000.0, -2.0 * k / dim)
    angles = tt * omega
    out = torch.empty((tt.shape[0], dim), dtype=torch.float64)
    out[:, 0::2] = torch.sin(angles)
    out[:, 1::2] = torch.cos(angles)
    out = out.to(dtype)
    return out[0] if scalar else out


class ConditionEmbedder(nn.Module):
    """Learned class/distance tables, each with a trailing trainable null row."""

    def __init__(self, vocab: ConditionVocabulary, dim: int = 128):
        super().__init__()
        self.vocab = vocab
        self.dim = dim
        self.class_table = nn.Embedding(vocab.num_classes + 1, dim)
        self.distance_table = nn.Embedding(vocab.num_distances + 1, dim)

    def token_indices(self, pairs) -> tuple[torch.Tensor, torch.Tensor]:
        """Map ConditionPairs to index tensors, nulls to the reserved rows."""
        if isinstance(pairs, ConditionPair):
            pairs = [pairs]
        cls, dist = [], []
        for p in pairs:
            p.validate(self.vocab)
            cls.append(self.vocab.null_class_token if p.class_token is None else p.class_token)
            dist.append(
                self.vocab.null_distance_token if p.distance_token is None else p.distance_token
            )
        return torch.tensor(cls, dtype=torch.long), torch.tensor(dist, dtype=torch.long)

    def forward(self, pairs) -> tuple[torch.Tensor, torch.Tensor]:
        """Row lookups; returns (class_emb, distance_emb), each (batch, dim)."""
        cls_idx, dist_idx = self.token_indices(pairs)
        weight = self.class_table.weight
        return (
            self.class_table(cls_idx.to(weight.device)),
            self.distance_table(dist_idx.to(weight.device)),
        )


def embed_condition(pair: ConditionPair, tables: ConditionEmbedder):
    """Look up the (class, distance) embedding rows for a single pair."""
    o_emb, d_emb = tables(pair)
    return o_emb[0], d_emb[0]


def combine_embeddings(x_emb, o_emb, d_emb, t_emb):
    """Sum the three condition vectors and add onto the feature embedding.

    The vector sum is broadcast over x_emb's trailing spatial axes when
    x_emb has more dimensions than the vectors (channel-wise injection).
    """
    if not (torch.is_tensor(o_emb) or isinstance(o_emb, (int, float))):
        o_emb = torch.as_tensor(o_emb)
    s = o_emb + d_emb + t_emb
    if torch.is_tensor(s) and torch.is_tensor(x_emb) and x_emb.dim() > s.dim():
        if s.dim() >= 1 and s.shape[-1] != x_emb.shape[-3]:
            raise ValueError(
                f"embedding width {s.shape[-1]} != channel count {x_emb.shape[-3]}"
            )
        s = s.reshape(*s.shape, 1, 1)
    return x_emb + s


def drop_conditions(
    pair: ConditionPair,
    p_drop: float,
    rng: torch.Generator,
    mode: str = "joint",
) -> ConditionPair:
    """Stochastically null out conditions for guidance training.

    "joint" replaces both tokens together with probability p_drop (the
    default); "independent" drops each axis separately, enabling
    single-axis guidance.
    """
    if not 0.0 <= p_drop <= 1.0:
        raise ValueError(f"p_drop must be in [0, 1], got {p_drop}")
    if mode == "joint":
        if _bernoulli(p_drop, rng):
            return ConditionPair.null()
        return pair
    if mode == "independent":
        cls = None if _bernoulli(p_drop, rng) else pair.class_token
        dist = None if _bernoulli(p_drop, rng) else pair.distance_token
        return ConditionPair(cls, dist)
    raise ValueError(f"unknown dropout mode {mode!r}")


def _bernoulli(p: float, rng: torch.Generator) -> bool:
    if p <= 0.0:
        return False
    if p >= 1.0:
        return True
    return bool(torch.rand((), generator=rng).item() < p)
