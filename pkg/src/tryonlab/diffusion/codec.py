"""Fixed orthonormal patch-projection codec standing in for a learned VAE.

Each non-overlapping factor x factor RGB patch (pixel values mapped to
[-1, 1]) is flattened and projected onto C orthonormal basis rows: the
first three capture per-channel patch means, the fourth a horizontal
luminance ramp, and any further channels come from a seeded QR
orthonormalization. Decoding applies the transpose, so decode(encode(x))
is an orthogonal projection: exact on patch-constant content and
non-expansive everywhere, which makes the round-trip error measurable and
stable enough to serve as the preservation bound at inference.
"""

from __future__ import annotations

import numpy as np
import torch

from ..errors import IndivisibleShape, ShapeMismatch


def _basis(factor: int, channels: int) -> np.ndarray:
    """(channels, 3 * factor^2) orthonormal rows, deterministic in its args."""
    f2 = factor * factor
    dim = 3 * f2
    if not 1 <= channels <= dim:
        raise ValueError(f"latent channels must lie in 1..{dim}, got {channels}")
    rows = []
    for c in range(min(channels, 3)):
        row = np.zeros((3, f2))
        row[c, :] = 1.0 / np.sqrt(f2)
        rows.append(row.reshape(-1))
    if channels >= 4:
        ramp = np.arange(factor) - (factor - 1) / 2.0          # zero-sum -> orthogonal
        patch = np.tile(ramp, (factor, 1))                     # vary along x
        row = np.tile(patch.reshape(-1), 3).reshape(3, f2)
        rows.append((row / np.linalg.norm(row)).reshape(-1))
    if channels > 4:
        rng = np.random.default_rng(1234 + factor)
        extra = rng.standard_normal((dim, channels - 4))
        basis_so_far = np.stack(rows, axis=1)
        extra -= basis_so_far @ (basis_so_far.T @ extra)
        q, _ = np.linalg.qr(extra)
        rows.extend(q[:, i] for i in range(channels - 4))
    return np.stack(rows[:channels], axis=0)


class PatchCodec:
    """Encoder/decoder between [0, 1] RGB rasters and (C, H/f, W/f) latents."""

    def __init__(self, factor: int = 8, latent_channels: int = 4,
                 scale: float = 0.125):
        self.factor = factor
        self.latent_channels = latent_channels
        self.scale = scale
        self._basis = _basis(factor, latent_channels)
        self.provenance = f"patch-orthonormal(f={factor},C={latent_channels})"

    def latent_shape(self, image_shape: tuple[int, int]) -> tuple[int, int, int]:
        h, w = image_shape
        self._check_divisible(h, w)
        return (self.latent_channels, h // self.factor, w // self.factor)

    def _check_divisible(self, h: int, w: int) -> None:
        if h % self.factor or w % self.factor:
            raise IndivisibleShape(f"raster {h}x{w} not divisible by {self.factor}")

    def _to_patches(self, image: np.ndarray) -> np.ndarray:
        h, w, _ = image.shape
        f = self.factor
        x = image.astype(np.float64) * 2.0 - 1.0
        x = x.transpose(2, 0, 1).reshape(3, h // f, f, w // f, f)
        return x.transpose(1, 3, 0, 2, 4).reshape(h // f, w // f, 3 * f * f)

    def encode(self, image: np.ndarray, dtype: torch.dtype = torch.float32) -> torch.Tensor:
        """float (H, W, 3) raster in [0, 1] -> latent tensor (C, H/f, W/f)."""
        image = np.asarray(image)
        if image.ndim != 3 or image.shape[2] != 3:
            raise ShapeMismatch(f"expected (H, W, 3) raster, got {image.shape}")
        self._check_divisible(*image.shape[:2])
        patches = self._to_patches(image)
        z = np.einsum("hwp,cp->chw", patches, self._basis) * self.scale
        return torch.from_numpy(np.ascontiguousarray(z)).to(dtype)

    def decode(self, latent: torch.Tensor) -> np.ndarray:
        """Latent (C, h, w) -> float32 (H, W, 3) raster clipped to [0, 1]."""
        z = latent.detach().cpu().numpy().astype(np.float64)
        if z.ndim != 3 or z.shape[0] != self.latent_channels:
            raise ShapeMismatch(f"expected ({self.latent_channels}, h, w), got {z.shape}")
        _, h, w = z.shape
        f = self.factor
        patches = np.einsum("chw,cp->hwp", z / self.scale, self._basis)
        x = patches.reshape(h, w, 3, f, f).transpose(2, 0, 3, 1, 4).reshape(3, h * f, w * f)
        return np.clip((x.transpose(1, 2, 0) + 1.0) / 2.0, 0.0, 1.0).astype(np.float32)

    def roundtrip(self, image: np.ndarray) -> np.ndarray:
        return self.decode(self.encode(image, dtype=torch.float64))

    def roundtrip_error(self, image: np.ndarray) -> float:
        """Max absolute pixel deviation of decode(encode(image)) from image."""
        return float(np.abs(self.roundtrip(image) - np.asarray(image, dtype=np.float32)).max())
