"""Deterministic sampler with optional early stop and latent compositing.

The trajectory visits `steps` uniformly spaced timesteps from T down to 1.
Each visited timestep costs exactly one denoiser evaluation; the update is
the deterministic (noise-preserving) jump

    z_next = sqrt(ab_next) * z0_hat + sqrt(1 - ab_next) * eps_hat.

With stop_fraction s > 0 the loop runs ceil((1 - s) * steps) evaluations
and returns the z0 estimate from the last one, i.e. the trajectory is cut
at roughly timestep s*T and finished with a single closed-form jump.

The per-step z0 estimate is clamped to the codec's plausible latent range
(|z| <= clamp_z0). Without a trained denoiser the closed-form inversion
amplifies the initial noise by 1/sqrt(alpha_bar), hundreds at early
timesteps, which would saturate every decoded pixel and erase the
conditioning signal; clamping keeps trajectories in the decodable range.

Compositing: after every update, latent cells outside the generation
region are replaced with the person latent noised to the same level using
the trajectory's initial noise (clean at the end). The generation region
must be conservative (only cells whose whole pixel block lies inside the
inpainting mask) so every pixel outside the mask decodes from preserved
content and deviates from the original image by at most the codec
round-trip error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .schedule import NoiseSchedule, add_noise, predict_z0
from .unet import UNetToy, denoiser_forward


def sampling_timesteps(T: int, steps: int) -> list[int]:
    """`steps` timesteps from T down to 1, uniformly spaced, rounded."""
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    if steps == 1:
        return [T]
    return [int(round(t)) for t in np.linspace(T, 1, steps)]


def num_executed_steps(steps: int, stop_fraction: float) -> int:
    """ceil((1 - stop_fraction) * steps); the full trajectory at 0."""
    if not 0.0 <= stop_fraction < 1.0:
        raise ValueError(f"stop_fraction must lie in [0, 1), got {stop_fraction}")
    if stop_fraction == 0.0:
        return steps
    return math.ceil((1.0 - stop_fraction) * steps)


@dataclass
class SampleResult:
    latent: torch.Tensor
    denoiser_calls: int
    executed_timesteps: list[int]


def sample(
    main: UNetToy,
    reference: UNetToy,
    *,
    schedule: NoiseSchedule,
    text_encoder,
    mask_lat: torch.Tensor,
    agnostic_lat: torch.Tensor,
    cloth_lat: torch.Tensor,
    y_main: str,
    y_ref: str,
    steps: int = 30,
    stop_fraction: float = 0.0,
    composit: bool = True,
    person_latent: torch.Tensor | None = None,
    generate_region: torch.Tensor | None = None,
    generator: torch.Generator | None = None,
    z_init: torch.Tensor | None = None,
    clamp_z0: float | None = 3.0,
) -> SampleResult:
    """Run the denoising trajectory for one sample (unbatched tensors).

    mask_lat (1, h, w): the resized inpainting mask fed to the U-Net.
    generate_region (h, w) bool: cells the sampler may overwrite when
    compositing (block-interior reduction of the pixel mask).
    """
    shape = agnostic_lat.shape
    if composit:
        if person_latent is None or generate_region is None:
            raise ValueError("compositing requires person_latent and generate_region")
        keep = ~torch.as_tensor(np.asarray(generate_region), dtype=torch.bool)

    if z_init is not None:
        z = z_init.clone()
    else:
        z = torch.randn(shape, generator=generator, dtype=agnostic_lat.dtype)
    eps_init = z.clone()

    def composite(latent: torch.Tensor, t_level: int) -> torch.Tensor:
        if not composit:
            return latent
        if t_level == 0:
            ref_level = person_latent
        else:
            ref_level = add_noise(person_latent, t_level, eps_init, schedule)
        return torch.where(keep.unsqueeze(0), ref_level, latent)

    ts = sampling_timesteps(schedule.T, steps)
    n_exec = num_executed_steps(steps, stop_fraction)
    executed: list[int] = []
    calls = 0
    with torch.no_grad():
        for i in range(n_exec):
            t = ts[i]
            eps_hat = denoiser_forward(main, reference, z, mask_lat, agnostic_lat,
                                       cloth_lat, y_main, y_ref, t, text_encoder)
            calls += 1
            executed.append(t)
            z0_hat = predict_z0(z, eps_hat, t, schedule)
            if clamp_z0 is not None:
                z0_hat = z0_hat.clamp(-clamp_z0, clamp_z0)
            if stop_fraction > 0.0 and i == n_exec - 1:
                # early stop: finish with the closed-form jump to t = 0
                z = composite(z0_hat, 0)
                break
            t_next = ts[i + 1] if i + 1 < steps else 0
            if t_next == 0:
                z = composite(z0_hat, 0)
            else:
                ab_next = schedule.alpha_bar(t_next)
                z = math.sqrt(ab_next) * z0_hat + math.sqrt(1.0 - ab_next) * eps_hat
                z = composite(z, t_next)
    return SampleResult(latent=z, denoiser_calls=calls, executed_timesteps=executed)
