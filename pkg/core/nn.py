# -*- coding: utf-8 -*-
"""
Neural building blocks shared by the VAE, the alignment module and the
denoiser: parameter containers, linear and convolution layers, group and
layer normalization, multi-head (cross) attention with capture hooks, a
pre-norm transformer block, residual blocks with time conditioning and the
2x resampling pair.
"""
import numpy as np
from core.tensor import Tensor, ShapeError, add, conv2d, concat, expand, matmul,\
    mul, normalize, permute, reshape, silu, softmax, upsample_nearest2x


def init_uniform(rng, shape, fan_in):
    """Fan-in scaled uniform initialization, U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


class Module:
    """
    Parameter container. Tensor attributes are parameters, Module attributes
    are children; both are tracked in assignment order.
    """

    def __init__(self):
        object.__setattr__(self, '_parameters', {})
        object.__setattr__(self, '_children', {})

    def __setattr__(self, name, value):
        if isinstance(value, Tensor):
            self._parameters[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def named_parameters(self, prefix=''):
        for name, tensor in self._parameters.items():
            yield f'{prefix}{name}', tensor
        for name, child in self._children.items():
            yield from child.named_parameters(f'{prefix}{name}.')

    def parameters(self):
        return [tensor for _, tensor in self.named_parameters()]

    def set_trainable(self, trainable):
        for tensor in self.parameters():
            tensor.requires_grad = trainable
            if not trainable:
                tensor.zero_grad()

    def zero_grad(self):
        for tensor in self.parameters():
            tensor.zero_grad()

    def to_dtype(self, dtype):
        for tensor in self.parameters():
            tensor.data = tensor.data.astype(dtype)
        return self

    def state_dict(self, prefix=''):
        return {name: tensor.data.copy() for name, tensor in self.named_parameters(prefix)}

    def load_state_dict(self, state, prefix=''):
        """
        Copies values into the parameters.

        Raises:
            KeyError: If a parameter is missing from ``state``.
            ShapeError: If a stored shape differs from the parameter's.
        """
        for name, tensor in self.named_parameters(prefix):
            if name not in state:
                raise KeyError(f'missing parameter "{name}" in state')
            value = np.asarray(state[name])
            if value.shape != tensor.shape:
                raise ShapeError(f'parameter "{name}" has shape {tensor.shape}, state has {value.shape}')
            tensor.data = value.astype(tensor.dtype).copy()

    def parameter_count(self):
        return int(sum(tensor.size for tensor in self.parameters()))


class ModuleList(Module):
    def __init__(self, modules=()):
        super().__init__()
        self._items = []
        for module in modules:
            self.append(module)

    def append(self, module):
        setattr(self, str(len(self._items)), module)
        self._items.append(module)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, index):
        return self._items[index]


class Linear(Module):
    """Token-wise affine map ``x @ weight.T + bias`` over the last axis."""

    def __init__(self, in_features, out_features, rng, bias=True, zero_init=False):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        if zero_init:
            self.weight = Tensor(np.zeros((out_features, in_features), dtype=np.float32))
        else:
            self.weight = Tensor(init_uniform(rng, (out_features, in_features), in_features))
        self.has_bias = bias
        if bias:
            if zero_init:
                self.bias = Tensor(np.zeros(out_features, dtype=np.float32))
            else:
                self.bias = Tensor(init_uniform(rng, (out_features,), in_features))

    def forward(self, x):
        if x.shape[-1] != self.in_features:
            raise ShapeError(f'Linear expects width {self.in_features}, got {x.shape}')
        out = matmul(x, permute(self.weight, (1, 0)))
        if self.has_bias:
            out = add(out, expand(self.bias, out.shape))
        return out


class Conv2d(Module):
    def __init__(self, in_channels, out_channels, kernel_size, rng, stride=1, pad=None, # pylint: disable=too-many-arguments
                 zero_init=False):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.stride = stride
        self.pad = kernel_size // 2 if pad is None else pad
        shape = (out_channels, in_channels, kernel_size, kernel_size)
        fan_in = in_channels * kernel_size * kernel_size
        if zero_init:
            self.weight = Tensor(np.zeros(shape, dtype=np.float32))
            self.bias = Tensor(np.zeros(out_channels, dtype=np.float32))
        else:
            self.weight = Tensor(init_uniform(rng, shape, fan_in))
            self.bias = Tensor(init_uniform(rng, (out_channels,), fan_in))

    def forward(self, x):
        return conv2d(x, self.weight, self.bias, stride=self.stride, pad=self.pad)


def _affine_channels(x, scale, shift, channel_axis):
    shape = [1] * x.ndim
    shape[channel_axis] = scale.shape[0]
    scale = expand(reshape(scale, shape), x.shape)
    shift = expand(reshape(shift, shape), x.shape)
    return add(mul(x, scale), shift)


def group_norm(x, groups, eps=1e-5):
    """
    Normalizes NCHW channels in ``groups`` groups, before any affine map.

    Raises:
        ShapeError: If the channel count is not divisible by ``groups``.
    """
    batch, channels = x.shape[0], x.shape[1]
    if channels % groups:
        raise ShapeError(f'group_norm: {channels} channels not divisible by {groups} groups')
    grouped = reshape(x, (batch, groups, channels // groups) + tuple(x.shape[2:]))
    normed = normalize(grouped, tuple(range(2, grouped.ndim)), eps)
    return reshape(normed, x.shape)


class GroupNorm(Module):
    def __init__(self, channels, groups, eps=1e-5):
        super().__init__()
        if channels % groups:
            raise ShapeError(f'GroupNorm: {channels} channels not divisible by {groups} groups')
        self.groups = groups
        self.eps = eps
        self.weight = Tensor(np.ones(channels, dtype=np.float32))
        self.bias = Tensor(np.zeros(channels, dtype=np.float32))

    def forward(self, x):
        return _affine_channels(group_norm(x, self.groups, self.eps), self.weight, self.bias, 1)


class LayerNorm(Module):
    def __init__(self, width, eps=1e-5):
        super().__init__()
        self.eps = eps
        self.weight = Tensor(np.ones(width, dtype=np.float32))
        self.bias = Tensor(np.zeros(width, dtype=np.float32))

    def forward(self, x):
        return _affine_channels(normalize(x, -1, self.eps), self.weight, self.bias, x.ndim - 1)


def attention(q, k, v):
    """
    Scaled dot-product attention, softmax(q kᵀ / sqrt(d)) v.

    Args:
        q (Tensor): Queries [B, L, d].
        k (Tensor): Keys [B, M, d].
        v (Tensor): Values [B, M, d].

    Returns:
        tuple[Tensor, Tensor]: Output [B, L, d] and the weight map [B, L, M].

    Raises:
        ShapeError: If widths or batch sizes disagree.
    """
    if q.ndim != 3 or k.ndim != 3 or v.ndim != 3:
        raise ShapeError(f'attention expects [B,L,d] operands, got {q.shape}, {k.shape}, {v.shape}')
    if not q.shape[2] == k.shape[2] == v.shape[2]:
        raise ShapeError(f'attention width mismatch: q {q.shape}, k {k.shape}, v {v.shape}')
    if not q.shape[0] == k.shape[0] == v.shape[0] or k.shape[1] != v.shape[1]:
        raise ShapeError(f'attention batch/key mismatch: q {q.shape}, k {k.shape}, v {v.shape}')
    scores = mul(matmul(q, permute(k, (0, 2, 1))), 1.0 / np.sqrt(q.shape[2]))
    weights = softmax(scores, axis=-1)
    return matmul(weights, v), weights


def multi_head_attention(q, k, v, heads):
    """Splits the width into ``heads`` heads; weights come back as [B, heads, L, M]."""
    batch, length, width = q.shape
    keys = k.shape[1]
    if width % heads:
        raise ShapeError(f'width {width} not divisible by {heads} heads')
    if heads == 1:
        out, weights = attention(q, k, v)
        return out, reshape(weights, (batch, 1, length, keys))
    head_width = width // heads

    def split(t, steps):
        t = permute(reshape(t, (batch, steps, heads, head_width)), (0, 2, 1, 3))
        return reshape(t, (batch * heads, steps, head_width))

    out, weights = attention(split(q, length), split(k, keys), split(v, keys))
    out = permute(reshape(out, (batch, heads, length, head_width)), (0, 2, 1, 3))
    return reshape(out, (batch, length, width)), reshape(weights, (batch, heads, length, keys))


class AttentionStore:
    """
    Per-invocation capture buffer for cross-attention weight maps.

    Each record holds the layer name, the sampler step and the head-averaged
    weights [B, L, M] as a numpy array together with the token grid (h, w).
    """

    def __init__(self):
        self.step = 0
        self.records = []

    def record(self, layer, weights, grid):
        maps = weights.data.mean(axis=1)
        self.records.append({
            'layer': layer,
            'step': self.step,
            'weights': np.array(maps, dtype=np.float64),
            'grid': tuple(grid)
        })

    def __len__(self):
        return len(self.records)


class Attention(Module):
    """Self-attention, or cross-attention when ``context_width`` is given."""

    def __init__(self, width, rng, context_width=None, heads=1, name='attn'): # pylint: disable=too-many-arguments
        super().__init__()
        self.width = width
        self.context_width = width if context_width is None else context_width
        self.heads = heads
        self.name = name
        self.to_q = Linear(width, width, rng, bias=False)
        self.to_k = Linear(self.context_width, width, rng, bias=False)
        self.to_v = Linear(self.context_width, width, rng, bias=False)
        self.to_out = Linear(width, width, rng, zero_init=True)

    def forward(self, x, context=None, store=None, grid=None):
        context = x if context is None else context
        if context.shape[-1] != self.context_width:
            raise ShapeError(f'{self.name}: context width {context.shape} does not match {self.context_width}')
        if context.shape[0] != x.shape[0]:
            raise ShapeError(f'{self.name}: batch mismatch {x.shape} vs context {context.shape}')
        out, weights = multi_head_attention(self.to_q(x), self.to_k(context), self.to_v(context),
                                            self.heads)
        if store is not None:
            store.record(self.name, weights, grid)
        return self.to_out(out)


class TransformerBlock(Module):
    """
    Pre-norm transformer block over tokens [B, L, d].

    Self-attention, optional cross-attention to a context sequence, then a
    SiLU feed-forward; every branch ends in a zero-initialized projection so
    a fresh block is the identity map.
    """

    def __init__(self, width, rng, context_width=None, heads=1, ffn_ratio=2, name='block'): # pylint: disable=too-many-arguments
        super().__init__()
        self.width = width
        self.has_cross = context_width is not None
        self.norm1 = LayerNorm(width)
        self.attn1 = Attention(width, rng, heads=heads, name=f'{name}.attn1')
        if self.has_cross:
            self.norm2 = LayerNorm(width)
            self.attn2 = Attention(width, rng, context_width=context_width, heads=heads,
                                   name=f'{name}.attn2')
        self.norm3 = LayerNorm(width)
        self.ff1 = Linear(width, width * ffn_ratio, rng)
        self.ff2 = Linear(width * ffn_ratio, width, rng, zero_init=True)

    def forward(self, x, context=None, store=None, grid=None):
        if x.shape[-1] != self.width:
            raise ShapeError(f'TransformerBlock expects width {self.width}, got {x.shape}')
        x = add(x, self.attn1(self.norm1(x)))
        if self.has_cross:
            if context is None:
                raise ValueError('cross-attention block called without context')
            x = add(x, self.attn2(self.norm2(x), context, store=store, grid=grid))
        return add(x, self.ff2(silu(self.ff1(self.norm3(x)))))


def tokens_from_map(x):
    """[B, C, h, w] -> [B, h*w, C]"""
    batch, channels, height, width = x.shape
    return permute(reshape(x, (batch, channels, height * width)), (0, 2, 1))


def map_from_tokens(tokens, height, width):
    """[B, h*w, C] -> [B, C, h, w]"""
    batch, _, channels = tokens.shape
    return reshape(permute(tokens, (0, 2, 1)), (batch, channels, height, width))


class SpatialTransformer(Module):
    """Runs a TransformerBlock over the pixels of a feature map, residually."""

    def __init__(self, channels, rng, context_width, heads=1, ffn_ratio=2, name='st'): # pylint: disable=too-many-arguments
        super().__init__()
        self.block = TransformerBlock(channels, rng, context_width=context_width, heads=heads,
                                      ffn_ratio=ffn_ratio, name=name)

    def forward(self, x, context, store=None):
        height, width = x.shape[2], x.shape[3]
        tokens = self.block(tokens_from_map(x), context, store=store, grid=(height, width))
        return map_from_tokens(tokens, height, width)


class ResBlock(Module):
    """GroupNorm-SiLU-conv residual block with an additive time embedding."""

    def __init__(self, in_channels, out_channels, time_width, groups, rng): # pylint: disable=too-many-arguments
        super().__init__()
        self.out_channels = out_channels
        self.norm1 = GroupNorm(in_channels, groups)
        self.conv1 = Conv2d(in_channels, out_channels, 3, rng)
        self.time_proj = Linear(time_width, out_channels, rng)
        self.norm2 = GroupNorm(out_channels, groups)
        self.conv2 = Conv2d(out_channels, out_channels, 3, rng, zero_init=True)
        self.skip = None
        if in_channels != out_channels:
            self.skip = Conv2d(in_channels, out_channels, 1, rng)

    def forward(self, x, temb):
        h = self.conv1(silu(self.norm1(x)))
        t = reshape(self.time_proj(silu(temb)), (h.shape[0], self.out_channels, 1, 1))
        h = add(h, expand(t, h.shape))
        h = self.conv2(silu(self.norm2(h)))
        residual = x if self.skip is None else self.skip(x)
        return add(residual, h)


class Downsample(Module):
    """Stride-2 4x4 convolution, exact halving of even extents."""

    def __init__(self, in_channels, out_channels, rng):
        super().__init__()
        self.conv = Conv2d(in_channels, out_channels, 4, rng, stride=2, pad=1)

    def forward(self, x):
        return self.conv(x)


class Upsample(Module):
    """Nearest-neighbour 2x followed by a 3x3 convolution."""

    def __init__(self, in_channels, out_channels, rng):
        super().__init__()
        self.conv = Conv2d(in_channels, out_channels, 3, rng)

    def forward(self, x):
        return self.conv(upsample_nearest2x(x))


def pad_channels(x, channels):
    """Zero-pads NCHW (or token) features along the channel axis up to ``channels``."""
    axis = 1 if x.ndim == 4 else x.ndim - 1
    missing = channels - x.shape[axis]
    if missing < 0:
        raise ShapeError(f'cannot pad {x.shape} down to {channels} channels')
    if missing == 0:
        return x
    shape = list(x.shape)
    shape[axis] = missing
    return concat([x, Tensor(np.zeros(shape, dtype=x.dtype))], axis=axis)


def timestep_embedding(timesteps, width, max_period=10000.0):
    """Sinusoidal embedding of (possibly fractional) timesteps, [B] -> [B, width]."""
    timesteps = np.asarray(timesteps, dtype=np.float64).reshape(-1)
    half = width // 2
    freqs = np.exp(-np.log(max_period) * np.arange(half, dtype=np.float64) / half)
    args = timesteps[:, None] * freqs[None, :]
    emb = np.concatenate([np.cos(args), np.sin(args)], axis=1)
    if width % 2:
        emb = np.concatenate([emb, np.zeros((emb.shape[0], 1))], axis=1)
    return Tensor(emb.astype(np.float32))
