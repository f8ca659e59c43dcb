# -*- coding: utf-8 -*-
import numpy as np
from core.nn import Module, Conv2d, Linear, ModuleList, TransformerBlock,\
    map_from_tokens, pad_channels, tokens_from_map
from core.tensor import Tensor, ShapeError, add, concat, expand, reshape


def _check_pair(x_t, f_lq):
    if x_t.ndim != 4 or f_lq.ndim != 4:
        raise ShapeError(f'align expects NCHW inputs, got {x_t.shape} and {f_lq.shape}')
    if x_t.shape[0] != f_lq.shape[0] or x_t.shape[2:] != f_lq.shape[2:]:
        raise ShapeError(
            f'align: noisy latent {x_t.shape} and LQ features {f_lq.shape} '
            'differ in batch or spatial size')


class AlignmentModule(Module):
    """
    Fuses the noisy latent with LQ features into aligned features.

    f_x = conv_x(x_t) and f_m = conv_m(f_lq) (3x3, same width), concatenated
    along channels and flattened to per-pixel tokens. Two transformer blocks
    (no text) run over the tokens, f_x zero-padded to the concat width is
    added back, and a token-wise linear layer projects to the denoiser input
    width.
    """

    def __init__(self, c_lat, c_feat, width, c_out, tokens, rng, heads=1, ffn_ratio=2): # pylint: disable=too-many-arguments
        super().__init__()
        if width % 2:
            raise ValueError(f'alignment width must be even, got {width}')
        self.width = width
        self.tokens = tokens
        self.conv_x = Conv2d(c_lat, width // 2, 3, rng)
        self.conv_m = Conv2d(c_feat, width // 2, 3, rng)
        # learned positions start at zero so a fresh module keeps Trans(f_c) = f_c
        self.position = Tensor(np.zeros((tokens, width), dtype=np.float32))
        self.blocks = ModuleList([
            TransformerBlock(width, rng, heads=heads, ffn_ratio=ffn_ratio, name=f'align.t{index + 1}')
            for index in range(2)
        ])
        self.out_linear = Linear(width, c_out, rng)

    def forward(self, x_t, f_lq):
        return self.align(x_t, f_lq)

    def align(self, x_t, f_lq):
        _check_pair(x_t, f_lq)
        height, width = x_t.shape[2], x_t.shape[3]
        if height * width != self.tokens:
            raise ShapeError(f'align was built for {self.tokens} tokens, got a {height}x{width} map')
        f_x = self.conv_x(x_t)
        f_m = self.conv_m(f_lq)
        tokens = tokens_from_map(concat([f_x, f_m], axis=1))
        position = expand(reshape(self.position, (1, self.tokens, self.width)), tokens.shape)
        hidden = add(tokens, position)
        for block in self.blocks:
            hidden = block(hidden)
        fused = add(hidden, pad_channels(tokens_from_map(f_x), self.width))
        return map_from_tokens(self.out_linear(fused), height, width)


class AddAlignment(Module):
    """Baseline fusion: one convolution per input, results summed."""

    def __init__(self, c_lat, c_feat, c_out, rng, kernel_size=3): # pylint: disable=too-many-arguments
        super().__init__()
        self.conv_x = Conv2d(c_lat, c_out, kernel_size, rng)
        self.conv_m = Conv2d(c_feat, c_out, kernel_size, rng)

    def forward(self, x_t, f_lq):
        return self.align(x_t, f_lq)

    def align(self, x_t, f_lq):
        _check_pair(x_t, f_lq)
        return add(self.conv_x(x_t), self.conv_m(f_lq))


def build_alignment(kind, c_lat, c_feat, arch, rng):
    """
    Creates the fusion module for ``kind``; ``none`` selects the add baseline.

    Args:
        kind (str): ``full``, ``add`` or ``none``.
        c_lat (int): Latent width.
        c_feat (int): LQ feature width (C_pen, or C_lat for last-layer features).
        arch (ArchitectureConfig): Widths, heads and latent size.
        rng (numpy.random.Generator): Initialization stream.
    """
    if kind == 'full':
        return AlignmentModule(c_lat, c_feat, arch.align_width, arch.c_align,
                               arch.latent_size ** 2, rng, heads=arch.align_heads,
                               ffn_ratio=arch.ffn_ratio)
    if kind in ('add', 'none'):
        return AddAlignment(c_lat, c_feat, arch.c_align, rng)
    raise ValueError(f'unknown alignment kind "{kind}"')
