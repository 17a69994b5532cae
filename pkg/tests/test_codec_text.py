import numpy as np
import pytest
import torch

from tryonlab.diffusion.codec import PatchCodec, _basis
from tryonlab.diffusion.text import HashTextEncoder
from tryonlab.errors import IndivisibleShape, ShapeMismatch


# ---------------------------------------------------------------------------
# codec
# ---------------------------------------------------------------------------

def test_basis_rows_orthonormal():
    for factor, channels in ((8, 4), (4, 4), (8, 6), (2, 1)):
        basis = _basis(factor, channels)
        gram = basis @ basis.T
        assert np.allclose(gram, np.eye(channels), atol=1e-12)


def test_encode_decode_shapes():
    codec = PatchCodec(factor=8, latent_channels=4)
    img = np.random.default_rng(0).random((64, 48, 3)).astype(np.float32)
    z = codec.encode(img)
    assert tuple(z.shape) == (4, 8, 6)
    assert codec.latent_shape((64, 48)) == (4, 8, 6)
    out = codec.decode(z)
    assert out.shape == (64, 48, 3)
    assert out.dtype == np.float32


def test_roundtrip_exact_on_block_constant_images():
    codec = PatchCodec(factor=8, latent_channels=4)
    rng = np.random.default_rng(3)
    img = np.repeat(np.repeat(rng.random((8, 6, 3)), 8, axis=0), 8, axis=1)
    assert codec.roundtrip_error(img.astype(np.float32)) < 1e-6


def test_roundtrip_error_bounded_and_stable(sample0):
    codec = PatchCodec()
    err = codec.roundtrip_error(sample0.person_image)
    assert 0.0 <= err <= 1.0
    # a second pass through the codec must not drift further: the decoded
    # image reconstructs itself almost exactly (clipping aside, decode is
    # an orthogonal projection)
    once = codec.roundtrip(sample0.person_image)
    twice = codec.roundtrip(once)
    assert float(np.abs(twice - once).max()) <= err + 1e-6


def test_codec_rejects_bad_shapes():
    codec = PatchCodec(factor=8)
    with pytest.raises(IndivisibleShape):
        codec.encode(np.zeros((30, 30, 3), dtype=np.float32))
    with pytest.raises(ShapeMismatch):
        codec.encode(np.zeros((32, 32), dtype=np.float32))
    with pytest.raises(ShapeMismatch):
        codec.decode(torch.zeros(3, 4, 4))


def test_codec_more_latent_channels_reduce_error(sample0):
    small = PatchCodec(factor=8, latent_channels=4)
    big = PatchCodec(factor=8, latent_channels=48)
    assert big.roundtrip_error(sample0.person_image) <= \
        small.roundtrip_error(sample0.person_image) + 1e-9


# ---------------------------------------------------------------------------
# text encoder
# ---------------------------------------------------------------------------

def test_text_encoder_deterministic():
    enc = HashTextEncoder(dim=16)
    a_tokens, a_pooled = enc.embed("a slim woman wears t-shirt")
    b_tokens, b_pooled = HashTextEncoder(dim=16).embed("a slim woman wears t-shirt")
    assert torch.equal(a_tokens, b_tokens)
    assert torch.equal(a_pooled, b_pooled)


def test_text_encoder_shapes_and_pooling():
    enc = HashTextEncoder(dim=8)
    tokens, pooled = enc.embed("one two three")
    assert tokens.shape == (3, 8)
    assert pooled.shape == (8,)
    assert torch.allclose(pooled, tokens.mean(dim=0))


def test_text_encoder_case_insensitive_tokens():
    enc = HashTextEncoder()
    a, _ = enc.embed("Cotton SHIRT")
    b, _ = enc.embed("cotton shirt")
    assert torch.equal(a, b)


def test_text_encoder_truncates_and_handles_empty():
    enc = HashTextEncoder(dim=4, max_tokens=77)
    tokens, _ = enc.embed(" ".join(["w"] * 100))
    assert tokens.shape == (77, 4)
    tokens, pooled = enc.embed("")
    assert tokens.shape == (1, 4)
    assert torch.equal(pooled, torch.zeros(4))


def test_different_prompts_embed_differently():
    enc = HashTextEncoder()
    a, _ = enc.embed("untucked")
    b, _ = enc.embed("fully tucked in")
    assert a.shape != b.shape or not torch.equal(a, b)
