# -*- coding: utf-8 -*-
"""
Tiny conditional U-Net predicting the injected noise from aligned features,
the timestep and caption embeddings, plus the learned caption embedder that
stands in for a pretrained text encoder.
"""
import numpy as np
from core.nn import Module, Conv2d, GroupNorm, Linear, ResBlock, SpatialTransformer,\
    Downsample, Upsample, pad_channels, timestep_embedding
from core.tensor import Tensor, ShapeError, add, concat, embedding, expand, reshape, silu

NULL_TOKEN = 0

VOCABULARY = (
    '<null>',
    'one', 'two', 'three',
    'red', 'green', 'blue', 'yellow', 'magenta', 'cyan', 'white', 'orange',
    'circle', 'square', 'triangle'
)
TOKEN_IDS = {word: index for index, word in enumerate(VOCABULARY)}


class TextEmbedder(Module):
    """
    Caption embedding: token table [V, dc] plus learned positions [M, dc].

    Captions are truncated or padded with the null token to M entries; the
    all-null caption is the unconditional embedding used by guidance.
    """

    def __init__(self, width, max_length, rng, vocabulary_size=len(VOCABULARY)):
        super().__init__()
        self.width = width
        self.max_length = max_length
        self.vocabulary_size = vocabulary_size
        self.table = Tensor(rng.normal(0.0, 1.0, (vocabulary_size, width)).astype(np.float32))
        self.position = Tensor(rng.normal(0.0, 0.1, (max_length, width)).astype(np.float32))

    def token_ids(self, tokens):
        ids = [int(token) for token in tokens][:self.max_length]
        for token in ids:
            if token < 0 or token >= self.vocabulary_size:
                raise ValueError(f'unknown token id {token}')
        return ids + [NULL_TOKEN] * (self.max_length - len(ids))

    def embed_caption(self, tokens):
        """Token-id list to [1, M, dc]."""
        return self.embed_batch([tokens])

    def embed_batch(self, captions):
        """List of token-id lists to [B, M, dc]."""
        ids = np.asarray([self.token_ids(tokens) for tokens in captions], dtype=np.int64)
        rows = embedding(self.table, ids)
        position = expand(reshape(self.position, (1, self.max_length, self.width)), rows.shape)
        return add(rows, position)

    def uncond(self, batch=1):
        return self.embed_batch([[]] * batch)


class UNetDenoiser(Module): # pylint: disable=too-many-instance-attributes
    """
    Two-level U-Net with a transformer (self + cross attention to the caption)
    after every residual block.

    Input: aligned features [B, C_a, h, w]. Output: epsilon [B, C_lat, h, w]
    through a zero-initialized output convolution.
    """

    def __init__(self, c_in, c_out, arch, rng):
        super().__init__()
        base = arch.unet_base
        wide = base * arch.unet_mult
        groups = arch.groups
        heads = arch.unet_heads
        context = arch.text_dim
        time_width = base * 4
        self.c_in = c_in
        self.c_out = c_out
        self.base = base
        self.time_fc1 = Linear(base, time_width, rng)
        self.time_fc2 = Linear(time_width, time_width, rng)
        self.conv_in = Conv2d(c_in, base, 3, rng)

        self.down1_res = ResBlock(base, base, time_width, groups, rng)
        self.down1_attn = SpatialTransformer(base, rng, context, heads, arch.ffn_ratio, 'unet.down1')
        self.down1_sample = Downsample(base, base, rng)
        self.down2_res = ResBlock(base, wide, time_width, groups, rng)
        self.down2_attn = SpatialTransformer(wide, rng, context, heads, arch.ffn_ratio, 'unet.down2')

        self.mid_res = ResBlock(wide, wide, time_width, groups, rng)
        self.mid_attn = SpatialTransformer(wide, rng, context, heads, arch.ffn_ratio, 'unet.mid')

        self.up2_res = ResBlock(wide + wide, wide, time_width, groups, rng)
        self.up2_attn = SpatialTransformer(wide, rng, context, heads, arch.ffn_ratio, 'unet.up2')
        self.up2_sample = Upsample(wide, wide, rng)
        self.up1_res = ResBlock(wide + base, base, time_width, groups, rng)
        self.up1_attn = SpatialTransformer(base, rng, context, heads, arch.ffn_ratio, 'unet.up1')

        self.norm_out = GroupNorm(base, groups)
        self.conv_out = Conv2d(base, c_out, 3, rng, zero_init=True)

    def forward(self, f_a, t, c, store=None):
        return self.predict_eps(f_a, t, c, store)

    def predict_eps(self, f_a, t, c, store=None):
        """
        Epsilon prediction for aligned features ``f_a`` at timesteps ``t``.

        Args:
            f_a (Tensor): [B, C_a, h, w] with even h and w.
            t (array-like): [B] timesteps (fractional values are allowed).
            c (Tensor): [B, M, dc] caption embeddings.
            store (AttentionStore, optional): Receives cross-attention maps.

        Raises:
            ShapeError: On batch, width or spatial mismatches.
        """
        t = np.asarray(t, dtype=np.float64).reshape(-1)
        if f_a.ndim != 4 or f_a.shape[1] != self.c_in:
            raise ShapeError(f'predict_eps expects [B,{self.c_in},h,w] features, got {f_a.shape}')
        if not f_a.shape[0] == t.shape[0] == c.shape[0]:
            raise ShapeError(
                f'predict_eps batch mismatch: features {f_a.shape}, t {t.shape}, context {c.shape}')
        if f_a.shape[2] % 2 or f_a.shape[3] % 2:
            raise ShapeError(f'predict_eps needs even spatial size, got {f_a.shape}')
        temb = self.time_fc2(silu(self.time_fc1(timestep_embedding(t, self.base))))

        h = self.conv_in(f_a)
        h = self.down1_attn(self.down1_res(h, temb), c, store)
        skip1 = h
        h = self.down2_res(self.down1_sample(h), temb)
        h = self.down2_attn(h, c, store)
        skip2 = h

        h = self.mid_attn(self.mid_res(h, temb), c, store)

        h = self.up2_attn(self.up2_res(concat([h, skip2], axis=1), temb), c, store)
        h = self.up2_sample(h)
        h = self.up1_attn(self.up1_res(concat([h, skip1], axis=1), temb), c, store)
        return self.conv_out(silu(self.norm_out(h)))


def pad_latent(x_t, c_a):
    """Zero-pads a noisy latent to the denoiser input width (prior pretraining path)."""
    if x_t.shape[1] > c_a:
        raise ShapeError(f'latent {x_t.shape} is wider than the denoiser input width {c_a}')
    return pad_channels(x_t, c_a)


def caption_words(tokens):
    return [VOCABULARY[token] for token in tokens]


def caption_tokens(words):
    unknown = [word for word in words if word not in TOKEN_IDS]
    if unknown:
        raise ValueError(f'unknown caption words: {", ".join(unknown)}')
    return [TOKEN_IDS[word] for word in words]
