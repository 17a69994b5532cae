"""Noise-prediction training for the main U-Net (reference stays frozen).

The loss is the plain mean squared error between the injected and the
predicted noise. Mask augmentation happens per step: every example gets a
freshly drawn dilation count each time it enters a batch, so the model sees
the whole fine-to-coarse spectrum of inpainting regions during training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from ..errors import NonFiniteLoss, ShapeMismatch
from ..masks import (
    DilationSpec,
    Mask,
    StructuringElement,
    build_coarse_mask,
    build_fine_mask,
    default_n_max,
    random_dilation_augment,
    resize_to_latent,
    square_element,
)
from .schedule import NoiseSchedule, add_noise
from .unet import UNetToy, denoiser_forward


def ldm_loss(eps: torch.Tensor, eps_hat: torch.Tensor) -> torch.Tensor:
    """Mean squared error over all elements."""
    if eps.shape != eps_hat.shape:
        raise ShapeMismatch(f"{tuple(eps.shape)} vs {tuple(eps_hat.shape)}")
    return ((eps - eps_hat) ** 2).mean()


def build_optimizer(model: UNetToy, name: str = "sgd", lr: float = 0.05):
    """Plain SGD is the contract; adaptive optimizers ride the same interface."""
    params = [p for p in model.parameters() if p.requires_grad]
    if name == "sgd":
        return torch.optim.SGD(params, lr=lr)
    if name == "adam":
        return torch.optim.Adam(params, lr=lr)
    raise ValueError(f"unknown optimizer {name!r}")


@dataclass
class TrainExample:
    """One sample's static conditioning; masks stay at pixel resolution."""

    sample_id: str
    z0: torch.Tensor
    agnostic_lat: torch.Tensor
    cloth_lat: torch.Tensor
    fine: Mask
    coarse: Mask
    y_main: str
    y_ref: str


def prepare_example(sample, prompt_pair, codec,
                    dtype: torch.dtype = torch.float32) -> TrainExample:
    return TrainExample(
        sample_id=sample.sample_id,
        z0=codec.encode(sample.person_image, dtype=dtype),
        agnostic_lat=codec.encode(sample.agnostic_image, dtype=dtype),
        cloth_lat=codec.encode(sample.clothing_image, dtype=dtype),
        fine=build_fine_mask(sample),
        coarse=build_coarse_mask(sample),
        y_main=prompt_pair.main_prompt,
        y_ref=prompt_pair.reference_prompt,
    )


def prepare_batch(examples: list[TrainExample], dilated: list[Mask],
                  factor: int, dtype: torch.dtype = torch.float32) -> dict:
    """Stack examples with their per-step dilated masks into batch tensors."""
    if len(examples) != len(dilated):
        raise ShapeMismatch(f"{len(examples)} examples vs {len(dilated)} masks")
    mask_lat = torch.stack([
        torch.from_numpy(resize_to_latent(m, factor)).to(dtype).unsqueeze(0)
        for m in dilated])
    return {
        "z0": torch.stack([e.z0 for e in examples]).to(dtype),
        "agnostic_lat": torch.stack([e.agnostic_lat for e in examples]).to(dtype),
        "cloth_lat": torch.stack([e.cloth_lat for e in examples]).to(dtype),
        "mask_lat": mask_lat,
        "y_main": [e.y_main for e in examples],
        "y_ref": [e.y_ref for e in examples],
    }


def train_step(main: UNetToy, reference: UNetToy, optimizer,
               schedule: NoiseSchedule, batch: dict, text_encoder,
               generator: torch.Generator | None = None) -> float:
    """One gradient step on the noise-prediction objective, main net only."""
    z0 = batch["z0"]
    b = z0.shape[0]
    t = torch.randint(1, schedule.T + 1, (b,), generator=generator)
    eps = torch.randn(z0.shape, generator=generator, dtype=z0.dtype)
    z_t = add_noise(z0, t, eps, schedule)
    eps_hat = denoiser_forward(main, reference, z_t, batch["mask_lat"],
                               batch["agnostic_lat"], batch["cloth_lat"],
                               batch["y_main"], batch["y_ref"], t, text_encoder)
    loss = ldm_loss(eps, eps_hat)
    if not torch.isfinite(loss):
        raise NonFiniteLoss(f"loss became {float(loss.detach())!r}")
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()
    return float(loss.detach())


def train_loop(
    main: UNetToy,
    reference: UNetToy,
    schedule: NoiseSchedule,
    text_encoder,
    examples: list[TrainExample],
    *,
    steps: int,
    factor: int,
    batch_size: int = 4,
    optimizer=None,
    optimizer_name: str = "sgd",
    lr: float = 0.05,
    element: StructuringElement | None = None,
    n_max: int | None = None,
    seed: int = 0,
) -> list[float]:
    """Train for a fixed number of steps over the prepared examples.

    Deterministic in seed: batch choice, the per-example dilation count, the
    timestep draw, and the noise draw are all derived from it.
    """
    if optimizer is None:
        optimizer = build_optimizer(main, optimizer_name, lr)
    element = element or square_element()
    if n_max is None:
        n_max = default_n_max(examples[0].fine.shape)
    picker = np.random.default_rng(seed)
    losses = []
    for step in range(steps):
        idx = picker.choice(len(examples), size=min(batch_size, len(examples)),
                            replace=False)
        chosen = [examples[i] for i in idx]
        dilated = [
            random_dilation_augment(
                e.fine, e.coarse,
                DilationSpec(element, n_max, rng_seed=seed * 1_000_003 + step * 131 + k))
            for k, e in enumerate(chosen)]
        batch = prepare_batch(chosen, dilated, factor, dtype=chosen[0].z0.dtype)
        gen = torch.Generator().manual_seed(seed * 7_919 + step)
        losses.append(train_step(main, reference, optimizer, schedule, batch,
                                 text_encoder, gen))
    return losses
