"""Deterministic hash-based text embedder standing in for a trained encoder.

Each lowercase whitespace token is hashed into a fixed Gaussian vector, so
the same string always embeds identically, different tokens are nearly
orthogonal, and no pretrained weights are involved. Produces per-token
vectors for cross-attention plus a pooled mean vector that is folded into
the timestep embedding.
"""

from __future__ import annotations

import hashlib

import numpy as np
import torch


class HashTextEncoder:
    def __init__(self, dim: int = 16, max_tokens: int = 77):
        self.dim = dim
        self.max_tokens = max_tokens
        self._cache: dict[str, np.ndarray] = {}

    def _token_vector(self, token: str) -> np.ndarray:
        vec = self._cache.get(token)
        if vec is None:
            seed = int.from_bytes(hashlib.sha256(token.encode("utf-8")).digest()[:8], "little")
            rng = np.random.default_rng(seed)
            vec = rng.standard_normal(self.dim) / np.sqrt(self.dim)
            self._cache[token] = vec
        return vec

    def embed(self, text: str, dtype: torch.dtype = torch.float32
              ) -> tuple[torch.Tensor, torch.Tensor]:
        """text -> (tokens (L, dim), pooled (dim,)); empty text gives one zero token."""
        tokens = text.lower().split()[: self.max_tokens]
        if not tokens:
            mat = np.zeros((1, self.dim))
        else:
            mat = np.stack([self._token_vector(t) for t in tokens])
        pooled = mat.mean(axis=0)
        return (torch.from_numpy(mat).to(dtype), torch.from_numpy(pooled).to(dtype))
