"""Binary mask construction and morphology for try-on inpainting.

Builds the fine mask (hugging the current garment) and the coarse mask
(a pose-derived bound on where new clothing may appear), implements
n-iterated dilation with a structuring element, the random dilation
augmentation used during training (dilate the fine mask, clip to the
coarse mask), plain mask algebra, and the nearest-neighbor resize that
brings masks to latent resolution.

Conventions baked in here:
  * dilation is the union of translates: (m (+) b)[p + q] = 1 for every
    set pixel p of m and every set offset q of b (offsets measured from
    the element center);
  * resize anchor rule: the low-resolution cell (i, j) samples the
    top-left pixel (i*factor, j*factor) of its cell, so results are
    bit-exact across implementations;
  * hands and feet are excluded from every mask this module produces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    EmptyRegion,
    FineNotInCoarse,
    IndivisibleShape,
    PoseIncomplete,
    ShapeMismatch,
)
from .labels import (
    FINE_SKIN_CLASSES,
    GARMENT_CLASS,
    HAND_FOOT_IDS,
    KEYPOINT_INDEX,
    PARSE_LABELS,
)

MASK_KINDS = ("fine", "coarse", "dilated", "refined")


@dataclass(frozen=True)
class Mask:
    """Binary raster (True = inpaint here) with a category tag."""

    bits: np.ndarray
    kind: str
    source: str = ""

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.ndim != 2:
            raise ShapeMismatch(f"mask must be 2-D, got shape {bits.shape}")
        if bits.dtype != np.bool_:
            uniq = np.unique(bits)
            if not np.all(np.isin(uniq, (0, 1))):
                raise ValueError(f"mask values must be binary, got {uniq[:8]}")
            bits = bits.astype(bool)
        object.__setattr__(self, "bits", bits)
        if self.kind not in MASK_KINDS:
            raise ValueError(f"unknown mask kind {self.kind!r}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.bits.shape

    def area(self) -> int:
        return int(self.bits.sum())


@dataclass(frozen=True)
class StructuringElement:
    """Odd-sized square binary element, origin at the center cell.

    The origin must be set so dilation is extensive (m subset of m (+) b).
    """

    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits).astype(bool)
        if bits.ndim != 2 or bits.shape[0] != bits.shape[1] or bits.shape[0] % 2 == 0:
            raise ValueError(f"element must be odd square, got shape {bits.shape}")
        if not bits[bits.shape[0] // 2, bits.shape[1] // 2]:
            raise ValueError("element origin cell must be set")
        object.__setattr__(self, "bits", bits)

    @property
    def radius(self) -> int:
        return self.bits.shape[0] // 2


def square_element(radius: int = 1) -> StructuringElement:
    """All-ones (2r+1) x (2r+1) element; the package default is radius 1."""
    return StructuringElement(np.ones((2 * radius + 1, 2 * radius + 1), dtype=bool))


def default_n_max(shape: tuple[int, int]) -> int:
    """Default dilation budget: ceil(max(H, W) / 16)."""
    return math.ceil(max(shape) / 16)


@dataclass(frozen=True)
class DilationSpec:
    """Element, maximum iteration count, and the seed that picks n."""

    element: StructuringElement = field(default_factory=square_element)
    n_max: int = 4
    rng_seed: int = 0

    def __post_init__(self):
        if not (isinstance(self.n_max, (int, np.integer)) and self.n_max >= 0):
            raise ValueError(f"n_max must be a finite non-negative int, got {self.n_max!r}")


def _shift_or(out: np.ndarray, bits: np.ndarray, di: int, dj: int) -> None:
    """out |= bits translated by (di, dj), zero-filled at the border."""
    h, w = bits.shape
    if abs(di) >= h or abs(dj) >= w:
        return
    dst = out[max(di, 0): h + min(di, 0), max(dj, 0): w + min(dj, 0)]
    src = bits[max(-di, 0): h + min(-di, 0), max(-dj, 0): w + min(-dj, 0)]
    dst |= src


def _dilate_once(bits: np.ndarray, elem: np.ndarray) -> np.ndarray:
    r = elem.shape[0] // 2
    out = np.zeros_like(bits)
    for di in range(-r, r + 1):
        for dj in range(-r, r + 1):
            if elem[di + r, dj + r]:
                _shift_or(out, bits, di, dj)
    return out


def dilate(m: Mask, b: StructuringElement, n: int) -> Mask:
    """n-iterated dilation of m with element b; n = 0 is the identity."""
    if n < 0:
        raise ValueError(f"iteration count must be >= 0, got {n}")
    bits = m.bits
    for _ in range(int(n)):
        bits = _dilate_once(bits, b.bits)
    return Mask(bits, m.kind, source=f"{m.source}|dilate^{n}")


def random_dilation_augment(m_f: Mask, m_c: Mask, spec: DilationSpec) -> Mask:
    """Training-time mask: dilate the fine mask a random number of times,
    then clip to the coarse mask.

    n is drawn uniformly from {0, ..., n_max} using spec.rng_seed, so the
    result interpolates between the fine mask (n = 0) and the coarse mask
    (n at saturation). A fine mask that escapes the coarse mask is an
    upstream construction bug and is reported, not silently clipped.
    """
    if m_f.shape != m_c.shape:
        raise ShapeMismatch(f"fine {m_f.shape} vs coarse {m_c.shape}")
    if not is_subset(m_f, m_c):
        raise FineNotInCoarse("fine mask has pixels outside the coarse mask")
    n = int(np.random.default_rng(spec.rng_seed).integers(0, spec.n_max + 1))
    grown = dilate(m_f, spec.element, n)
    return Mask(grown.bits & m_c.bits, "dilated", source=f"augment(n={n},seed={spec.rng_seed})")


def mask_union(a: Mask, b: Mask, kind: str | None = None) -> Mask:
    if a.shape != b.shape:
        raise ShapeMismatch(f"{a.shape} vs {b.shape}")
    return Mask(a.bits | b.bits, kind or a.kind, source=f"union({a.source},{b.source})")


def mask_intersect(a: Mask, b: Mask, kind: str | None = None) -> Mask:
    if a.shape != b.shape:
        raise ShapeMismatch(f"{a.shape} vs {b.shape}")
    return Mask(a.bits & b.bits, kind or a.kind, source=f"intersect({a.source},{b.source})")


def is_subset(a: Mask, b: Mask) -> bool:
    """True when every set pixel of a is set in b."""
    if a.shape != b.shape:
        raise ShapeMismatch(f"{a.shape} vs {b.shape}")
    return bool((a.bits <= b.bits).all())


def resize_to_latent(m: Mask, factor: int) -> np.ndarray:
    """Nearest-neighbor downsample to H/factor x W/factor.

    Each output cell takes the top-left pixel of its factor x factor block,
    so the result stays strictly binary and is reproducible bit-for-bit.
    """
    h, w = m.shape
    if factor < 1 or h % factor or w % factor:
        raise IndivisibleShape(f"shape {m.shape} not divisible by factor {factor}")
    return m.bits[::factor, ::factor].copy()


def block_interior_mask(m: Mask, factor: int) -> np.ndarray:
    """Downsampled mask that is set only where the whole block is inside m.

    Used for latent-space compositing in the final pass: a latent cell may
    be regenerated only if every pixel it decodes to lies inside the
    inpainting mask, so pixels outside the mask are always reconstructed
    from the preserved latent.
    """
    h, w = m.shape
    if factor < 1 or h % factor or w % factor:
        raise IndivisibleShape(f"shape {m.shape} not divisible by factor {factor}")
    blocks = m.bits.reshape(h // factor, factor, w // factor, factor)
    return blocks.all(axis=(1, 3))


def block_cover_mask(m: Mask, factor: int) -> np.ndarray:
    """Downsampled mask set wherever the block touches m at all.

    The permissive counterpart of block_interior_mask, used for the
    early-stopped sketch pass whose output only feeds the segmenter: every
    latent cell the mask touches may regenerate, maximizing the area that
    can react to the prompt.
    """
    h, w = m.shape
    if factor < 1 or h % factor or w % factor:
        raise IndivisibleShape(f"shape {m.shape} not divisible by factor {factor}")
    blocks = m.bits.reshape(h // factor, factor, w // factor, factor)
    return blocks.any(axis=(1, 3))


def _class_bits(parse: np.ndarray, names) -> np.ndarray:
    ids = [PARSE_LABELS[n] for n in names]
    return np.isin(parse, ids)


def build_fine_mask(sample) -> Mask:
    """Tight mask over the current garment of the sample's category.

    Covers the garment class plus the skin it could expose or cover (arms
    and any bare torso for upper garments, legs for lower ones, all three
    for dresses). Hands, feet, face, hair, and background are never
    included, so pose-defining extremities stay visible.
    """
    parse = sample.parsing_map
    garment = GARMENT_CLASS[sample.category]
    if not (parse == PARSE_LABELS[garment]).any():
        raise EmptyRegion(f"no {garment!r} pixels in sample {sample.sample_id!r}")
    bits = _class_bits(parse, (garment,) + FINE_SKIN_CLASSES[sample.category])
    bits &= ~np.isin(parse, HAND_FOOT_IDS)
    return Mask(bits, "fine", source=f"parse:{sample.sample_id}")


# Keypoints defining the coarse rectangle per category. "span" names feed the
# horizontal extent; "top"/"bottom" the vertical one. Names in "required"
# must be present above the confidence threshold.
_COARSE_RECT_RULES = {
    "upper_body": {
        "required": ("right_shoulder", "left_shoulder", "right_hip", "left_hip"),
        "optional": ("right_elbow", "left_elbow", "right_wrist", "left_wrist"),
        "top": ("right_shoulder", "left_shoulder"),
        "bottom": ("right_hip", "left_hip"),
    },
    "lower_body": {
        "required": ("right_hip", "left_hip", "right_ankle", "left_ankle"),
        "optional": ("right_knee", "left_knee"),
        "top": ("right_hip", "left_hip"),
        "bottom": ("right_ankle", "left_ankle"),
    },
    "dresses": {
        "required": ("right_shoulder", "left_shoulder", "right_knee", "left_knee"),
        "optional": ("right_elbow", "left_elbow", "right_wrist", "left_wrist",
                     "right_hip", "left_hip"),
        "top": ("right_shoulder", "left_shoulder"),
        "bottom": ("right_knee", "left_knee"),
    },
}


def coarse_rectangle(
    keypoints: np.ndarray,
    category: str,
    shape: tuple[int, int],
    pad: int = 2,
    confidence_threshold: float = 0.05,
) -> tuple[int, int, int, int]:
    """Inclusive (top, bottom, left, right) of the coarse keypoint rectangle.

    rows span [min y of the top set - pad, max y of the bottom set + pad],
    columns span [min x - pad, max x + pad] over every usable span point
    (required plus any optional point above the threshold), clipped to the
    frame. Fractional coordinates are floored/ceiled outward.
    """
    rules = _COARSE_RECT_RULES[category]
    kp = np.asarray(keypoints, dtype=float)

    def usable(name: str) -> bool:
        return kp[KEYPOINT_INDEX[name], 2] > confidence_threshold

    missing = [n for n in rules["required"] if not usable(n)]
    if missing:
        raise PoseIncomplete(f"keypoints below confidence threshold: {missing}")

    span = [kp[KEYPOINT_INDEX[n], :2] for n in rules["required"]]
    span += [kp[KEYPOINT_INDEX[n], :2] for n in rules["optional"] if usable(n)]
    xs = np.array([p[0] for p in span])
    top = min(kp[KEYPOINT_INDEX[n], 1] for n in rules["top"])
    bottom = max(kp[KEYPOINT_INDEX[n], 1] for n in rules["bottom"])

    h, w = shape
    r0 = max(0, math.floor(top) - pad)
    r1 = min(h - 1, math.ceil(bottom) + pad)
    c0 = max(0, math.floor(xs.min()) - pad)
    c1 = min(w - 1, math.ceil(xs.max()) + pad)
    return r0, r1, c0, c1


def build_coarse_mask(
    sample,
    pad: int = 2,
    confidence_threshold: float = 0.05,
) -> Mask:
    """Generous, garment-shape-agnostic mask from pose keypoints.

    The keypoint rectangle (shoulders-to-hips widened to the arm extremes
    for upper garments, hips-to-ankles for lower ones, shoulders-to-knees
    for dresses) is unioned with the fine mask so containment always holds,
    then hands and feet are carved back out.
    """
    parse = sample.parsing_map
    r0, r1, c0, c1 = coarse_rectangle(
        sample.pose_keypoints, sample.category, parse.shape, pad, confidence_threshold
    )
    bits = np.zeros(parse.shape, dtype=bool)
    bits[r0:r1 + 1, c0:c1 + 1] = True
    try:
        bits |= build_fine_mask(sample).bits
    except EmptyRegion:
        pass
    bits &= ~np.isin(parse, HAND_FOOT_IDS)
    return Mask(bits, "coarse", source=f"pose:{sample.sample_id}")
