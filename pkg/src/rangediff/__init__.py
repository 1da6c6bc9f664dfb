"""Conditional-diffusion synthetic imagery for distance-conditioned recognition.

Train a generator that maps (class, distance) conditions to images, filter
failed generations with a learned quality classifier, score synthetic sets
with IS/FID/SSIM, and compare real vs. synthetic training data for a
downstream recognizer.
"""

__version__ = "0.1.0"

from .conditioning import (
    ConditionPair,
    ConditionVocabulary,
    combine_embeddings,
    condition_for,
    drop_conditions,
    embed_condition,
    sinusoidal_time_embedding,
)
from .diffusion import (
    SamplerConfig,
    Trajectory,
    cfg_combine,
    ddim_reverse_step,
    ddpm_reverse_step,
    forward_chain,
    predict_x0,
    q_sample,
    sample,
    sample_batch,
    training_loss,
    training_loss_batch,
    uniform_step_schedule,
)
from .schedule import (
    NoiseSchedule,
    build_cosine_schedule,
    build_linear_schedule,
    schedule_from_betas,
    schedule_from_metadata,
    schedule_to_metadata,
)
from .unet import ConditionalUNet, UNetConfig, build_unet, count_parameters, denoise

__all__ = [
    "__version__",
    "ConditionPair",
    "ConditionVocabulary",
    "ConditionalUNet",
    "NoiseSchedule",
    "SamplerConfig",
    "Trajectory",
    "UNetConfig",
    "build_cosine_schedule",
    "build_linear_schedule",
    "build_unet",
    "cfg_combine",
    "combine_embeddings",
    "condition_for",
    "count_parameters",
    "ddim_reverse_step",
    "ddpm_reverse_step",
    "denoise",
    "drop_conditions",
    "embed_condition",
    "forward_chain",
    "predict_x0",
    "q_sample",
    "sample",
    "sample_batch",
    "schedule_from_betas",
    "schedule_from_metadata",
    "schedule_to_metadata",
    "sinusoidal_time_embedding",
    "training_loss",
    "training_loss_batch",
    "uniform_step_schedule",
]
