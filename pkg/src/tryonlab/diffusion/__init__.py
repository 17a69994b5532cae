"""Miniature latent-diffusion inpainting core.

Noise schedule, fixed patch-projection codec, hash text embedder, toy
conditional U-Nets with reference key/value attention injection, the
noise-prediction training objective, a deterministic sampler with optional
early stop and latent compositing, and a versioned binary checkpoint format.
"""

from .schedule import NoiseSchedule, make_schedule, add_noise, predict_z0
from .codec import PatchCodec
from .text import HashTextEncoder
from .unet import (
    UNetToy,
    attention_with_injected_kv,
    denoiser_forward,
    make_unet_pair,
    parameters_checksum,
)
from .training import build_optimizer, ldm_loss, prepare_batch, train_loop, train_step
from .sampling import SampleResult, num_executed_steps, sample, sampling_timesteps
from .checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "NoiseSchedule", "make_schedule", "add_noise", "predict_z0",
    "PatchCodec", "HashTextEncoder",
    "UNetToy", "attention_with_injected_kv", "denoiser_forward",
    "make_unet_pair", "parameters_checksum",
    "build_optimizer", "ldm_loss", "prepare_batch", "train_loop", "train_step",
    "SampleResult", "num_executed_steps", "sample", "sampling_timesteps",
    "load_checkpoint", "save_checkpoint",
]
