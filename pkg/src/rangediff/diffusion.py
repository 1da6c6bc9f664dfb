"""Forward corruption, training objective, and reverse samplers.

The forward chain corrupts a clean image x_0 by t steps of Gaussian noise;
its closed-form marginal is

    x_t = sqrt(abar_t) * x_0 + sqrt(1 - abar_t) * eps,   eps ~ N(0, I).

The model predicts the injected noise eps; both reverse samplers (ancestral
and the non-Markovian few-step sampler with stochasticity knob eta) rebuild
the image from that prediction.  Guided sampling blends the conditional and
unconditional predictions.

Every operation is a pure function of its inputs (randomness comes from an
explicit torch.Generator), preserves tensor shape, and works for any tensor
shape: scalars in tests, (C, H, W) images, or batches.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import torch

from .conditioning import ConditionPair
from .schedule import NoiseSchedule

ENV_NUM_THREADS = "DUR_NUM_THREADS"


def _check_t(t: int, schedule: NoiseSchedule, low: int = 1) -> None:
    if not low <= t <= schedule.T:
        raise ValueError(f"timestep {t} outside [{low}, {schedule.T}]")


def _check_shapes(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def q_sample(x0: torch.Tensor, t: int, eps: torch.Tensor, schedule: NoiseSchedule) -> torch.Tensor:
    """Closed-form corruption to step t; identity at t=0."""
    _check_t(t, schedule, low=0)
    _check_shapes(x0, eps, "q_sample")
    ab = schedule.alpha_bar(t)
    return x0 * math.sqrt(ab) + eps * math.sqrt(1.0 - ab)


def forward_chain(
    x0: torch.Tensor, t: int, rng: torch.Generator, schedule: NoiseSchedule
) -> torch.Tensor:
    """Literal t-step Markov corruption; the Monte-Carlo oracle for q_sample."""
    _check_t(t, schedule)
    x = x0
    for s in range(1, t + 1):
        beta = schedule.beta(s)
        z = torch.randn(x.shape, generator=rng, dtype=x.dtype, device=x.device)
        x = x * math.sqrt(1.0 - beta) + z * math.sqrt(beta)
    return x


def predict_x0(
    x_t: torch.Tensor, t: int, eps_hat: torch.Tensor, schedule: NoiseSchedule
) -> torch.Tensor:
    """Algebraic inverse of q_sample given the (estimated) noise."""
    _check_t(t, schedule)
    _check_shapes(x_t, eps_hat, "predict_x0")
    ab = schedule.alpha_bar(t)
    return (x_t - eps_hat * math.sqrt(1.0 - ab)) / math.sqrt(ab)


def ddpm_reverse_step(
    x_t: torch.Tensor,
    t: int,
    eps_hat: torch.Tensor,
    schedule: NoiseSchedule,
    rng: torch.Generator,
) -> torch.Tensor:
    """One ancestral step with fixed variance beta_t; deterministic at t=1."""
    _check_t(t, schedule)
    _check_shapes(x_t, eps_hat, "ddpm_reverse_step")
    beta = schedule.beta(t)
    ab = schedule.alpha_bar(t)
    mu = (x_t - eps_hat * (beta / math.sqrt(1.0 - ab))) / math.sqrt(schedule.alpha(t))
    if t == 1:
        return mu
    z = torch.randn(x_t.shape, generator=rng, dtype=x_t.dtype, device=x_t.device)
    return mu + z * math.sqrt(beta)


def ddim_sigma(schedule: NoiseSchedule, t: int, t_prev: int, eta: float) -> float:
    """Stochasticity scale: 0 when eta=0, posterior std when eta=1."""
    ab_t = schedule.alpha_bar(t)
    ab_prev = schedule.alpha_bar(t_prev)
    return eta * math.sqrt((1.0 - ab_prev) / (1.0 - ab_t)) * math.sqrt(1.0 - ab_t / ab_prev)


def ddim_reverse_step(
    x_t: torch.Tensor,
    t: int,
    t_prev: int,
    eps_hat: torch.Tensor,
    eta: float,
    schedule: NoiseSchedule,
    rng: torch.Generator,
) -> torch.Tensor:
    """Non-Markovian jump t -> t_prev.

    x_{t_prev} = sqrt(abar_prev) * x0_hat + sqrt(1 - abar_prev - sigma^2) * eps_hat
                 + sigma * z.  Fully deterministic at eta=0 (rng untouched);
    returns x0_hat exactly at t_prev=0.
    """
    _check_t(t, schedule)
    if not 0 <= t_prev < t:
        raise ValueError(f"need 0 <= t_prev < t, got t_prev={t_prev}, t={t}")
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"eta must be in [0, 1], got {eta}")
    _check_shapes(x_t, eps_hat, "ddim_reverse_step")
    ab_prev = schedule.alpha_bar(t_prev)
    sigma = ddim_sigma(schedule, t, t_prev, eta)
    x0_hat = predict_x0(x_t, t, eps_hat, schedule)
    eps_coef = math.sqrt(max(0.0, 1.0 - ab_prev - sigma * sigma))
    x = x0_hat * math.sqrt(ab_prev) + eps_hat * eps_coef
    if sigma > 0.0:
        z = torch.randn(x_t.shape, generator=rng, dtype=x_t.dtype, device=x_t.device)
        x = x + z * sigma
    return x


def cfg_combine(eps_cond: torch.Tensor, eps_uncond: torch.Tensor, w: float) -> torch.Tensor:
    """Guided blend (1+w)*eps_cond - w*eps_uncond.

    Written as eps_cond + w*(eps_cond - eps_uncond) so that w=0 and the
    eps_cond == eps_uncond fixpoint are exact in floating point.
    """
    if w < 0.0:
        raise ValueError(f"guidance weight must be >= 0, got {w}")
    _check_shapes(eps_cond, eps_uncond, "cfg_combine")
    return eps_cond + (eps_cond - eps_uncond) * w


def training_loss(
    denoiser,
    x0: torch.Tensor,
    condition: ConditionPair,
    rng: torch.Generator,
    schedule: NoiseSchedule,
) -> torch.Tensor:
    """Noise-prediction MSE at a uniformly drawn timestep (single example)."""
    t = int(torch.randint(1, schedule.T + 1, (), generator=rng))
    eps = torch.randn(x0.shape, generator=rng, dtype=x0.dtype, device=x0.device)
    x_t = q_sample(x0, t, eps, schedule)
    eps_hat = denoiser(x_t, t, condition)
    return ((eps - eps_hat) ** 2).mean()


def training_loss_batch(
    denoiser,
    x0: torch.Tensor,
    conditions,
    rng: torch.Generator,
    schedule: NoiseSchedule,
) -> torch.Tensor:
    """Batched objective with an independent timestep per example."""
    b = x0.shape[0]
    t = torch.randint(1, schedule.T + 1, (b,), generator=rng)
    eps = torch.randn(x0.shape, generator=rng, dtype=x0.dtype, device=x0.device)
    ab = torch.tensor(schedule.alpha_bars, dtype=x0.dtype, device=x0.device)[t]
    shape = (b,) + (1,) * (x0.dim() - 1)
    x_t = x0 * ab.sqrt().view(shape) + eps * (1.0 - ab).sqrt().view(shape)
    eps_hat = denoiser(x_t, t, conditions)
    return ((eps - eps_hat) ** 2).mean()


def uniform_step_schedule(T: int, num_steps: int) -> tuple:
    """Rounded uniform stride from T down to 1, strictly decreasing."""
    if num_steps < 1:
        raise ValueError(f"num_steps must be >= 1, got {num_steps}")
    if num_steps > T:
        raise ValueError(f"num_steps={num_steps} exceeds T={T}")
    if num_steps == 1:
        if T != 1:
            raise ValueError("a single-entry schedule must end at 1; need T=1")
        return (1,)
    steps = np.rint(np.linspace(T, 1, num_steps)).astype(int)
    # rounding can create duplicates when num_steps approaches T; repair
    steps[0] = T
    for i in range(1, num_steps):
        steps[i] = min(steps[i], steps[i - 1] - 1)
    steps[-1] = max(steps[-1], 1)
    for i in range(num_steps - 2, -1, -1):
        steps[i] = max(steps[i], steps[i + 1] + 1)
    if steps[0] != T:
        raise ValueError(f"cannot fit {num_steps} strictly decreasing steps in [1, {T}]")
    return tuple(int(s) for s in steps)


@dataclass
class SamplerConfig:
    """Reverse-sampler knobs plus the output image shape."""

    num_steps: int = 150
    eta: float = 0.0
    guidance_weight: float = 1.0
    step_schedule: tuple | None = None
    image_shape: tuple = (3, 64, 64)

    def resolve_steps(self, T: int) -> tuple:
        steps = self.step_schedule or uniform_step_schedule(T, self.num_steps)
        self.validate_steps(steps, T)
        return tuple(steps)

    @staticmethod
    def validate_steps(steps, T: int) -> None:
        if len(steps) == 0:
            raise ValueError("empty step schedule")
        if steps[-1] != 1:
            raise ValueError("step schedule must end at 1")
        if any(s2 >= s1 for s1, s2 in zip(steps, steps[1:])):
            raise ValueError("step schedule must be strictly decreasing")
        if steps[0] > T or steps[-1] < 1:
            raise ValueError(f"step schedule not within [1, {T}]")

    def validate(self, T: int) -> None:
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError(f"eta must be in [0, 1], got {self.eta}")
        if self.guidance_weight < 0.0:
            raise ValueError("guidance weight must be >= 0")
        self.resolve_steps(T)

    def to_metadata(self) -> dict:
        return {
            "num_steps": self.num_steps,
            "eta": self.eta,
            "guidance_weight": self.guidance_weight,
            "image_shape": list(self.image_shape),
        }

    @staticmethod
    def from_metadata(meta: dict) -> "SamplerConfig":
        return SamplerConfig(
            num_steps=meta.get("num_steps", 150),
            eta=meta.get("eta", 0.0),
            guidance_weight=meta.get("guidance_weight", 1.0),
            image_shape=tuple(meta.get("image_shape", (3, 64, 64))),
        )


@dataclass
class Trajectory:
    """(t, image) pairs recorded from noise down to the final sample."""

    steps: list = field(default_factory=list)
    images: list = field(default_factory=list)
    condition: ConditionPair | None = None

    def append(self, t: int, image: torch.Tensor) -> None:
        if self.steps and t >= self.steps[-1]:
            raise ValueError("trajectory timesteps must be strictly decreasing")
        self.steps.append(t)
        self.images.append(image.detach().clone())

    def __len__(self) -> int:
        return len(self.steps)


def sample(
    denoiser,
    condition: ConditionPair,
    config: SamplerConfig,
    schedule: NoiseSchedule,
    rng: torch.Generator,
    record_trajectory: bool = False,
    x_T: torch.Tensor | None = None,
):
    """Generate one image by iterated guided reverse jumps.

    Draws x_T ~ N(0, I) (or starts from the supplied noise), walks the step
    schedule with the denoiser evaluated twice per step (given condition and
    fully-null condition) blended by cfg_combine, and clamps the final image
    to [-1, 1].  Returns (image, trajectory-or-None).
    """
    if not (condition.is_fully_specified or condition.is_fully_null):
        raise ValueError("condition must be fully specified or fully null")
    steps = config.resolve_steps(schedule.T)
    if not 0.0 <= config.eta <= 1.0:
        raise ValueError(f"eta must be in [0, 1], got {config.eta}")
    null = ConditionPair.null()
    if x_T is None:
        x = torch.randn(tuple(config.image_shape), generator=rng)
    else:
        x = x_T.clone()
    traj = Trajectory(condition=condition) if record_trajectory else None
    if traj is not None:
        traj.append(steps[0], x)
    with torch.no_grad():
        for i, t in enumerate(steps):
            t_prev = steps[i + 1] if i + 1 < len(steps) else 0
            eps_cond = denoiser(x, t, condition)
            eps_uncond = denoiser(x, t, null)
            eps = cfg_combine(eps_cond, eps_uncond, config.guidance_weight)
            x = ddim_reverse_step(x, t, t_prev, eps, config.eta, schedule, rng)
            if traj is not None and t_prev > 0:
                traj.append(t_prev, x)
    x = x.clamp(-1.0, 1.0)
    if traj is not None:
        traj.append(0, x)
    return x, traj


def worker_cap(requested: int) -> int:
    """Apply the DUR_NUM_THREADS environment cap to a worker count."""
    cap = os.environ.get(ENV_NUM_THREADS)
    if cap:
        requested = min(requested, max(1, int(cap)))
    return max(1, requested)


def sample_batch(
    denoiser,
    conditions,
    config: SamplerConfig,
    schedule: NoiseSchedule,
    base_seed: int,
    num_workers: int = 1,
) -> list:
    """Sample one image per condition, bit-reproducibly across worker counts.

    Image i always uses its own generator seeded base_seed + i, and torch
    intra-op threading is pinned to 1 for the duration so results do not
    depend on how many workers run concurrently.
    """
    num_workers = worker_cap(num_workers)

    def one(i: int) -> torch.Tensor:
        rng = torch.Generator().manual_seed(base_seed + i)
        img, _ = sample(denoiser, conditions[i], config, schedule, rng)
        return img

    prev_threads = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        if num_workers == 1:
            return [one(i) for i in range(len(conditions))]
        with ThreadPoolExecutor(max_workers=num_workers) as pool:
            return list(pool.map(one, range(len(conditions))))
    finally:
        torch.set_num_threads(prev_threads)


def save_trajectory(traj: Trajectory, out_dir, vocab) -> None:
    """Write frame_{t:04}.png per recorded step plus an index document."""
    from .datapipe import array_to_image, denormalize

    os.makedirs(out_dir, exist_ok=True)
    for t, img in zip(traj.steps, traj.images):
        frame = array_to_image(denormalize(img.clamp(-1.0, 1.0)))
        frame.save(os.path.join(out_dir, f"frame_{t:04}.png"))
    cond = traj.condition or ConditionPair.null()
    index = {
        "steps": list(traj.steps),
        "condition": {
            "class": None if cond.class_token is None else vocab.class_name(cond.class_token),
            "distance": None
            if cond.distance_token is None
            else vocab.token_distance(cond.distance_token),
        },
    }
    with open(os.path.join(out_dir, "index.json"), "w", encoding="utf-8") as fh:
        json.dump(index, fh, indent=2)
