"""Toy conditional U-Nets with reference key/value self-attention injection.

Two structurally identical denoisers: the trainable main net takes the
noisy latent stacked with the resized inpainting mask and the agnostic
latent (2C+1 channels); the frozen reference net takes the clothing latent
alone (C channels) and is only ever run to harvest the per-layer
self-attention keys/values, which the main net concatenates with its own so
queries attend across both paths under one softmax.

Dimensions are deliberately tiny (two resolution levels, one attention head)
so every mechanism runs in seconds on a CPU while staying under a 50k
parameter budget.
"""

from __future__ import annotations

import hashlib
import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import LayerShapeMismatch, ShapeMismatch


def timestep_embedding(t: torch.Tensor, dim: int, max_period: float = 10000.0
                       ) -> torch.Tensor:
    """Sinusoidal embedding, (B,) int tensor -> (B, dim)."""
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float64) / half)
    args = t.double().unsqueeze(1) * freqs.unsqueeze(0)
    return torch.cat([torch.cos(args), torch.sin(args)], dim=1)


def attention_with_injected_kv(
    q: torch.Tensor,
    k: torch.Tensor,
    v: torch.Tensor,
    extra_k: torch.Tensor | None = None,
    extra_v: torch.Tensor | None = None,
    key_mask: torch.Tensor | None = None,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Single-head scaled dot-product attention over concatenated keys/values.

    q: (B, Lq, D); k, v: (B, Lk, D); extra_k/extra_v, when given, are
    appended along the token axis so each softmax row normalizes over
    Lk + Le entries. key_mask (B, Lk [+ Le]) silences keys with -inf before
    the softmax. Returns (output (B, Lq, D), weights (B, Lq, Lk [+ Le])).
    """
    if q.shape[0] != k.shape[0] or q.shape[-1] != k.shape[-1] or k.shape != v.shape:
        raise LayerShapeMismatch(
            f"q {tuple(q.shape)} vs k {tuple(k.shape)} vs v {tuple(v.shape)}")
    if (extra_k is None) != (extra_v is None):
        raise LayerShapeMismatch("extra_k and extra_v must be given together")
    if extra_k is not None:
        if extra_k.shape != extra_v.shape or extra_k.shape[0] != k.shape[0] \
                or extra_k.shape[-1] != k.shape[-1]:
            raise LayerShapeMismatch(
                f"injected kv {tuple(extra_k.shape)} incompatible with k {tuple(k.shape)}")
        k = torch.cat([k, extra_k], dim=1)
        v = torch.cat([v, extra_v], dim=1)
    scores = q @ k.transpose(-2, -1) / math.sqrt(q.shape[-1])
    if key_mask is not None:
        if key_mask.shape != (k.shape[0], k.shape[1]):
            raise LayerShapeMismatch(
                f"key mask {tuple(key_mask.shape)} vs keys {tuple(k.shape[:2])}")
        scores = scores.masked_fill(~key_mask.unsqueeze(1), float("-inf"))
    weights = scores.softmax(dim=-1)
    return weights @ v, weights


class SelfAttention(nn.Module):
    """Spatial self-attention that can harvest or ingest external K/V."""

    def __init__(self, channels: int, head_dim: int = 32, groups: int = 4):
        super().__init__()
        self.norm = nn.GroupNorm(groups, channels)
        self.to_q = nn.Linear(channels, head_dim)
        self.to_k = nn.Linear(channels, head_dim)
        self.to_v = nn.Linear(channels, head_dim)
        self.to_out = nn.Linear(head_dim, channels)

    def forward(self, x, injected_kv=None, harvest: list | None = None):
        b, c, h, w = x.shape
        tokens = self.norm(x).reshape(b, c, h * w).transpose(1, 2)
        q, k, v = self.to_q(tokens), self.to_k(tokens), self.to_v(tokens)
        if harvest is not None:
            harvest.append((k, v))
        extra_k, extra_v = injected_kv if injected_kv is not None else (None, None)
        out, _ = attention_with_injected_kv(q, k, v, extra_k, extra_v)
        out = self.to_out(out).transpose(1, 2).reshape(b, c, h, w)
        return x + out


class CrossAttention(nn.Module):
    """Queries from the spatial stream, keys/values from text tokens."""

    def __init__(self, channels: int, ctx_dim: int, head_dim: int = 32, groups: int = 4):
        super().__init__()
        self.norm = nn.GroupNorm(groups, channels)
        self.to_q = nn.Linear(channels, head_dim)
        self.to_k = nn.Linear(ctx_dim, head_dim)
        self.to_v = nn.Linear(ctx_dim, head_dim)
        self.to_out = nn.Linear(head_dim, channels)

    def forward(self, x, ctx, ctx_mask=None):
        b, c, h, w = x.shape
        tokens = self.norm(x).reshape(b, c, h * w).transpose(1, 2)
        q = self.to_q(tokens)
        k, v = self.to_k(ctx), self.to_v(ctx)
        out, _ = attention_with_injected_kv(q, k, v, key_mask=ctx_mask)
        out = self.to_out(out).transpose(1, 2).reshape(b, c, h, w)
        return x + out


class ResBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, temb_dim: int, groups: int = 4):
        super().__init__()
        self.norm1 = nn.GroupNorm(groups, in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.temb_proj = nn.Linear(temb_dim, out_ch)
        self.norm2 = nn.GroupNorm(groups, out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x, temb):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.temb_proj(temb)[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return self.skip(x) + h


class UNetToy(nn.Module):
    """Two-level conditional denoiser with self- and text cross-attention.

    role "main" predicts noise from the stacked inpainting input; role
    "reference" is constructed frozen and acts purely as a feature extractor.
    """

    def __init__(self, in_channels: int, latent_channels: int = 4,
                 base_channels: int = 8, ctx_dim: int = 16, head_dim: int = 32,
                 temb_dim: int = 32, role: str = "main"):
        super().__init__()
        if role not in ("main", "reference"):
            raise ValueError(f"role must be main|reference, got {role!r}")
        self.role = role
        self.in_channels = in_channels
        self.latent_channels = latent_channels
        ch0, ch1 = base_channels, base_channels * 2

        self.temb_lin1 = nn.Linear(temb_dim, temb_dim)
        self.temb_lin2 = nn.Linear(temb_dim, temb_dim)
        self.pooled_proj = nn.Linear(ctx_dim, temb_dim)
        self.temb_dim = temb_dim

        self.in_conv = nn.Conv2d(in_channels, ch0, 3, padding=1)
        self.down0_res = ResBlock(ch0, ch0, temb_dim)
        self.down0_self = SelfAttention(ch0, head_dim)
        self.down0_cross = CrossAttention(ch0, ctx_dim, head_dim)
        self.downsample = nn.Conv2d(ch0, ch1, 3, stride=2, padding=1)
        self.down1_res = ResBlock(ch1, ch1, temb_dim)
        self.down1_self = SelfAttention(ch1, head_dim)
        self.down1_cross = CrossAttention(ch1, ctx_dim, head_dim)
        self.mid_res = ResBlock(ch1, ch1, temb_dim)
        self.up1_res = ResBlock(ch1 * 2, ch1, temb_dim)
        self.up1_self = SelfAttention(ch1, head_dim)
        self.up1_cross = CrossAttention(ch1, ctx_dim, head_dim)
        self.up_conv = nn.Conv2d(ch1, ch0, 3, padding=1)
        self.up0_res = ResBlock(ch0 * 2, ch0, temb_dim)
        self.up0_self = SelfAttention(ch0, head_dim)
        self.up0_cross = CrossAttention(ch0, ctx_dim, head_dim)
        self.out_norm = nn.GroupNorm(4, ch0)
        self.out_conv = nn.Conv2d(ch0, latent_channels, 3, padding=1)

        if role == "reference":
            self.requires_grad_(False)
            self.eval()

    @property
    def num_self_attention_layers(self) -> int:
        return 4

    def _timestep(self, t, batch: int, dtype, device) -> torch.Tensor:
        t = torch.as_tensor(t, dtype=torch.long, device=device)
        if t.ndim == 0:
            t = t.expand(batch)
        emb = timestep_embedding(t, self.temb_dim).to(dtype)
        return self.temb_lin2(F.silu(self.temb_lin1(emb)))

    def forward(self, x, t, ctx, pooled, ctx_mask=None,
                injected_kv=None, harvest_kv: bool = False):
        """x (B, in_channels, h, w) -> predicted noise (B, C_latent, h, w).

        injected_kv: per-self-attention-layer (K, V) list in traversal
        order, as returned when harvest_kv is true.
        """
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeMismatch(
                f"expected (B, {self.in_channels}, h, w), got {tuple(x.shape)}")
        if injected_kv is not None and len(injected_kv) != self.num_self_attention_layers:
            raise LayerShapeMismatch(
                f"expected {self.num_self_attention_layers} injected (K, V) pairs, "
                f"got {len(injected_kv)}")
        b = x.shape[0]
        temb = self._timestep(t, b, x.dtype, x.device) + self.pooled_proj(pooled)
        harvest: list | None = [] if harvest_kv else None
        inj = list(injected_kv) if injected_kv is not None else [None] * 4

        h0 = self.in_conv(x)
        h0 = self.down0_res(h0, temb)
        h0 = self.down0_self(h0, inj[0], harvest)
        h0 = self.down0_cross(h0, ctx, ctx_mask)
        h1 = self.downsample(h0)
        h1 = self.down1_res(h1, temb)
        h1 = self.down1_self(h1, inj[1], harvest)
        h1 = self.down1_cross(h1, ctx, ctx_mask)
        m = self.mid_res(h1, temb)
        u1 = self.up1_res(torch.cat([m, h1], dim=1), temb)
        u1 = self.up1_self(u1, inj[2], harvest)
        u1 = self.up1_cross(u1, ctx, ctx_mask)
        u0 = self.up_conv(F.interpolate(u1, scale_factor=2, mode="nearest"))
        u0 = self.up0_res(torch.cat([u0, h0], dim=1), temb)
        u0 = self.up0_self(u0, inj[3], harvest)
        u0 = self.up0_cross(u0, ctx, ctx_mask)
        eps = self.out_conv(F.silu(self.out_norm(u0)))
        if harvest_kv:
            return eps, harvest
        return eps


def make_unet_pair(latent_channels: int = 4, base_channels: int = 8,
                   ctx_dim: int = 16, head_dim: int = 32,
                   seed: int = 0) -> tuple[UNetToy, UNetToy]:
    """Seeded (main, reference) pair; the reference comes out frozen."""
    torch.manual_seed(seed)
    main = UNetToy(2 * latent_channels + 1, latent_channels, base_channels,
                   ctx_dim, head_dim, role="main")
    torch.manual_seed(seed + 1)
    reference = UNetToy(latent_channels, latent_channels, base_channels,
                        ctx_dim, head_dim, role="reference")
    return main, reference


def parameters_checksum(model: nn.Module) -> str:
    """sha256 over all named parameters, order-stable across runs."""
    digest = hashlib.sha256()
    for name, param in sorted(model.named_parameters()):
        digest.update(name.encode())
        digest.update(param.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()


def encode_prompts(texts, encoder, batch: int, dtype=torch.float32):
    """Encode one prompt (broadcast) or a list of prompts (padded).

    Returns (ctx (B, L, d), ctx_mask (B, L) bool, pooled (B, d)).
    """
    if isinstance(texts, str):
        texts = [texts] * batch
    if len(texts) != batch:
        raise ShapeMismatch(f"{len(texts)} prompts for batch of {batch}")
    encoded = [encoder.embed(t, dtype=dtype) for t in texts]
    max_len = max(tok.shape[0] for tok, _ in encoded)
    ctx = torch.zeros(batch, max_len, encoder.dim, dtype=dtype)
    mask = torch.zeros(batch, max_len, dtype=torch.bool)
    pooled = torch.zeros(batch, encoder.dim, dtype=dtype)
    for i, (tok, pool) in enumerate(encoded):
        ctx[i, : tok.shape[0]] = tok
        mask[i, : tok.shape[0]] = True
        pooled[i] = pool
    return ctx, mask, pooled


def denoiser_forward(
    main: UNetToy,
    reference: UNetToy,
    z_t: torch.Tensor,
    mask_lat: torch.Tensor,
    agnostic_lat: torch.Tensor,
    cloth_lat: torch.Tensor,
    y_main,
    y_ref,
    t,
    text_encoder,
) -> torch.Tensor:
    """One conditioned denoising evaluation.

    Runs the frozen reference net on the clothing latent under the
    reference prompt to harvest per-layer K/V, then the main net on
    [z_t | resized mask | agnostic latent] under the main prompt with those
    K/V injected. Inputs may be batched (B, C, h, w) or single (C, h, w);
    the output always matches z_t's shape.
    """
    squeeze = z_t.ndim == 3
    if squeeze:
        z_t, mask_lat, agnostic_lat, cloth_lat = (
            x.unsqueeze(0) for x in (z_t, mask_lat, agnostic_lat, cloth_lat))
    spatial = z_t.shape[-2:]
    for name, tensor in (("mask", mask_lat), ("agnostic", agnostic_lat),
                         ("clothing", cloth_lat)):
        if tensor.shape[-2:] != spatial or tensor.shape[0] != z_t.shape[0]:
            raise ShapeMismatch(f"{name} latent {tuple(tensor.shape)} does not "
                                f"match z_t {tuple(z_t.shape)}")
    b, dtype = z_t.shape[0], z_t.dtype
    ref_ctx, ref_mask, ref_pooled = encode_prompts(y_ref, text_encoder, b, dtype)
    main_ctx, main_mask, main_pooled = encode_prompts(y_main, text_encoder, b, dtype)
    with torch.no_grad():
        _, kv = reference(cloth_lat, t, ref_ctx, ref_pooled,
                          ctx_mask=ref_mask, harvest_kv=True)
    x = torch.cat([z_t, mask_lat.to(dtype), agnostic_lat], dim=1)
    eps = main(x, t, main_ctx, main_pooled, ctx_mask=main_mask, injected_kv=kv)
    return eps.squeeze(0) if squeeze else eps
