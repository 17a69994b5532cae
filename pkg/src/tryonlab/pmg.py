"""Prompt-aware mask generation and the end-to-end try-on pipeline.

Inference runs coarse-to-fine: an early-stopped generation pass under the
pose-derived coarse mask sketches where the prompted garment wants to be, a
segmenter extracts that region from the decoded sketch, the region is
unioned with the fine mask (hands/feet carved back out) to get the refined
inpainting mask, and a full-length pass under the refined mask produces the
output. The refined mask therefore follows the text prompt instead of the
original garment silhouette, while everything outside it stays preserved.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
import torch

from .diffusion.codec import PatchCodec
from .diffusion.sampling import SampleResult
from .diffusion.sampling import sample as sample_trajectory
from .diffusion.schedule import NoiseSchedule
from .diffusion.unet import UNetToy
from .errors import SegmenterShapeMismatch
from .labels import GARMENT_CLASS, HAND_FOOT_IDS, PARSE_LABELS
from .masks import (
    Mask,
    block_cover_mask,
    block_interior_mask,
    build_coarse_mask,
    build_fine_mask,
    resize_to_latent,
)

_GARMENT_IDS = frozenset(PARSE_LABELS[name] for name in GARMENT_CLASS.values())


@dataclass(frozen=True)
class PMGConfig:
    """Early-stop fraction, step count, and the segmentation contract."""

    sigma: float = 0.5
    steps: int = 30
    segmentation_backend: str = "threshold"
    target_classes: frozenset = field(default_factory=lambda: _GARMENT_IDS)
    composit: bool = True

    def __post_init__(self):
        if not 0.0 <= self.sigma < 1.0:
            raise ValueError(f"sigma must lie in [0, 1), got {self.sigma}")
        if self.steps < 2:
            raise ValueError(f"steps must be >= 2, got {self.steps}")


class Segmenter(Protocol):
    """raster (H, W, 3) -> label raster (H, W) over the declared parse ids."""

    def __call__(self, raster: np.ndarray) -> np.ndarray: ...


class ThresholdSegmenter:
    """Deterministic mock parser driven by the toy model's own output.

    Pixels whose luminance falls inside [low, high) are labeled as the
    target class, everything else as background. Because the generated
    raster depends on the text conditioning, so does this labeling, which
    is what makes the refined mask prompt-aware at desk scale. Never emits
    hand or foot labels.
    """

    def __init__(self, target_class: int = PARSE_LABELS["upper_clothes"],
                 low: float = 0.25, high: float = 0.75):
        self.target_class = int(target_class)
        self.low, self.high = float(low), float(high)

    def __call__(self, raster: np.ndarray) -> np.ndarray:
        lum = np.asarray(raster, dtype=np.float64) @ (0.299, 0.587, 0.114)
        labels = np.zeros(lum.shape, dtype=np.uint8)
        labels[(lum >= self.low) & (lum < self.high)] = self.target_class
        return labels


def refine_mask(x0_raster: np.ndarray, fine_mask: Mask, segmenter: Segmenter,
                config: PMGConfig) -> Mask:
    """(target-class pixels of the sketch) union fine mask, minus hands/feet."""
    labels = np.asarray(segmenter(x0_raster))
    if labels.shape != np.asarray(x0_raster).shape[:2]:
        raise SegmenterShapeMismatch(
            f"segmenter returned {labels.shape} for raster {np.asarray(x0_raster).shape[:2]}")
    region = np.isin(labels, sorted(config.target_classes))
    bits = (region | fine_mask.bits) & ~np.isin(labels, HAND_FOOT_IDS)
    return Mask(bits, "refined", source=f"pmg({fine_mask.source})")


@dataclass
class PMGResult:
    output: np.ndarray          # final decoded raster (H, W, 3)
    refined_mask: Mask
    coarse_mask: Mask
    coarse_raster: np.ndarray   # decoded early-stop sketch
    coarse_calls: int
    final_calls: int

    @property
    def total_calls(self) -> int:
        return self.coarse_calls + self.final_calls


@dataclass
class TryOnPipeline:
    """Bundles the trained nets and fixed components for inference."""

    main: UNetToy
    reference: UNetToy
    schedule: NoiseSchedule
    codec: PatchCodec
    text_encoder: object
    segmenter: Segmenter

    def _conditioning(self, sample, mask: Mask, permissive: bool):
        # the sketch pass regenerates every block the mask touches; the
        # final pass only blocks fully inside the mask, so preservation of
        # outside pixels survives the decode
        f = self.codec.factor
        region = block_cover_mask(mask, f) if permissive else block_interior_mask(mask, f)
        return {
            "mask_lat": torch.from_numpy(resize_to_latent(mask, f)).float().unsqueeze(0),
            "generate_region": region,
            "agnostic_lat": self.codec.encode(sample.agnostic_image),
            "cloth_lat": self.codec.encode(sample.clothing_image),
            "person_latent": self.codec.encode(sample.person_image),
        }

    def _run(self, sample, mask: Mask, prompts, *, steps: int, sigma: float,
             composit: bool, seed: int, permissive_region: bool = False) -> SampleResult:
        cond = self._conditioning(sample, mask, permissive_region)
        return sample_trajectory(
            self.main, self.reference, schedule=self.schedule,
            text_encoder=self.text_encoder,
            mask_lat=cond["mask_lat"], agnostic_lat=cond["agnostic_lat"],
            cloth_lat=cond["cloth_lat"],
            y_main=prompts.main_prompt, y_ref=prompts.reference_prompt,
            steps=steps, stop_fraction=sigma, composit=composit,
            person_latent=cond["person_latent"],
            generate_region=cond["generate_region"],
            generator=torch.Generator().manual_seed(seed),
        )

    def inpaint(self, sample, mask: Mask, prompts, *, steps: int = 30,
                composit: bool = True, seed: int = 0) -> tuple[np.ndarray, SampleResult]:
        """One full-length pass under an arbitrary mask (the non-PMG baseline)."""
        result = self._run(sample, mask, prompts, steps=steps, sigma=0.0,
                           composit=composit, seed=seed)
        return self.codec.decode(result.latent), result

    def coarse_pass(self, sample, coarse_mask: Mask, prompts,
                    config: PMGConfig, seed: int = 0) -> tuple[np.ndarray, SampleResult]:
        """Early-stopped pass under the coarse mask; returns the decoded sketch."""
        if coarse_mask.kind != "coarse":
            raise ValueError(f"expected a coarse mask, got kind={coarse_mask.kind!r}")
        result = self._run(sample, coarse_mask, prompts, steps=config.steps,
                           sigma=config.sigma, composit=config.composit, seed=seed,
                           permissive_region=True)
        return self.codec.decode(result.latent), result

    def generate(self, sample, prompts, config: PMGConfig, seed: int = 0) -> PMGResult:
        """Full pipeline: coarse pass -> refine mask -> final inpainting pass."""
        coarse = build_coarse_mask(sample)
        sketch, coarse_result = self.coarse_pass(sample, coarse, prompts, config, seed)
        fine = build_fine_mask(sample)
        refined = refine_mask(sketch, fine, self.segmenter, config)
        # retention also applies against the sample's own parse: the person's
        # actual hands/feet stay outside the inpainting mask no matter what
        # the sketch segmentation claimed
        refined = Mask(refined.bits & ~np.isin(sample.parsing_map, HAND_FOOT_IDS),
                       "refined", source=refined.source)
        final_result = self._run(sample, refined, prompts, steps=config.steps,
                                 sigma=0.0, composit=config.composit, seed=seed + 1)
        return PMGResult(
            output=self.codec.decode(final_result.latent),
            refined_mask=refined,
            coarse_mask=coarse,
            coarse_raster=sketch,
            coarse_calls=coarse_result.denoiser_calls,
            final_calls=final_result.denoiser_calls,
        )
