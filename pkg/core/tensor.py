# -*- coding: utf-8 -*-
"""
Minimal N-dimensional tensor with reverse-mode automatic differentiation.

Every value that flows through the restoration pipeline (noisy latents, LQ
features, noise samples, text embeddings, parameters) is a ``Tensor``.
Operations record a ``TapeNode`` when any input requires gradients, and
``backward()`` walks the tape in a deterministic topological order.

Broadcasting is deliberately narrow: elementwise operations accept equal
shapes or one operand holding a single element. Anything wider goes through
the explicit ``expand`` operation.
"""
from collections import Counter
from contextlib import contextmanager
import numpy as np

DEFAULT_DTYPE = np.float32
FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

_STATE = {
    'grad_enabled': True
}

OP_COUNTS = Counter()


class ShapeError(ValueError):
    """Raised when operand shapes violate an operation's shape contract."""


class TapeNode: # pylint: disable=too-few-public-methods
    """
    One recorded operation on the tape.

    Attributes:
        op (str): Operation identifier, e.g. ``'conv2d'``.
        inputs (tuple[Tensor]): The operands, in call order.
        backward_fn (callable): Maps the output gradient to a tuple with one
            gradient (or ``None``) per input.
    """
    __slots__ = ('op', 'inputs', 'backward_fn')

    def __init__(self, op, inputs, backward_fn):
        self.op = op
        self.inputs = inputs
        self.backward_fn = backward_fn


class Tensor:
    """
    Row-major real-valued array with optional tape participation.

    Floating point numpy arrays keep their dtype (float64 is only used for
    gradient verification), anything else is converted to float32.
    """

    def __init__(self, data, requires_grad=False, name=None):
        if isinstance(data, Tensor):
            data = data.data
        if isinstance(data, np.ndarray) and data.dtype in FLOAT_DTYPES:
            self.data = data
        else:
            self.data = np.asarray(data, dtype=DEFAULT_DTYPE)
        self.requires_grad = requires_grad
        self.grad = None
        self.node = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0])

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        """Clears the accumulated gradient; backward() otherwise accumulates."""
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        return f'Tensor(shape={self.shape}, requires_grad={self.requires_grad})'

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return slice_(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def permute(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return permute(self, axes)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def as_tensor(value):
    """Wraps python scalars and arrays as constant tensors."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def is_grad_enabled():
    return _STATE['grad_enabled']


@contextmanager
def no_grad():
    """Disables tape recording inside the block (inference, frozen branches)."""
    previous = _STATE['grad_enabled']
    _STATE['grad_enabled'] = False
    try:
        yield
    finally:
        _STATE['grad_enabled'] = previous


def reset_op_counts():
    OP_COUNTS.clear()


def _make(op, data, inputs, backward_fn):
    OP_COUNTS[op] += 1
    requires_grad = _STATE['grad_enabled'] and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=requires_grad)
    if requires_grad:
        out.node = TapeNode(op, tuple(inputs), backward_fn)
    return out


def _topological_order(root):
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        tensor, expanded = stack.pop()
        if expanded:
            order.append(tensor)
            continue
        if id(tensor) in visited:
            continue
        visited.add(id(tensor))
        stack.append((tensor, True))
        if tensor.node is not None:
            for parent in reversed(tensor.node.inputs):
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
    return order


def backward(loss):
    """
    Accumulates d(loss)/d(leaf) into ``.grad`` of every reachable leaf that
    requires gradients.

    Args:
        loss (Tensor): A single-element tensor recorded on the tape.

    Raises:
        ShapeError: If the loss holds more than one element.
        ValueError: If the loss is not attached to the tape.
    """
    if loss.size != 1:
        raise ShapeError(f'backward() needs a scalar loss, got shape {loss.shape}')
    if not loss.requires_grad:
        raise ValueError('backward() called on a tensor that is not on the tape')

    grads = {id(loss): np.ones_like(loss.data)}
    for tensor in reversed(_topological_order(loss)):
        grad = grads.pop(id(tensor), None)
        if grad is None:
            continue
        if tensor.node is None:
            if tensor.grad is None:
                tensor.grad = np.array(grad, dtype=tensor.dtype)
            else:
                tensor.grad = tensor.grad + grad
            continue
        input_grads = tensor.node.backward_fn(grad)
        for parent, parent_grad in zip(tensor.node.inputs, input_grads):
            if parent_grad is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + parent_grad
            else:
                grads[key] = parent_grad


def zero_grad(tensors):
    for tensor in tensors:
        tensor.zero_grad()


# elementwise

def _operands(op, a, b):
    a = as_tensor(a)
    b = as_tensor(b)
    if a.shape == b.shape:
        return a, b, a.data, b.data
    if b.size == 1 and a.ndim >= b.ndim:
        return a, b, a.data, b.data.reshape(())
    if a.size == 1 and b.ndim >= a.ndim:
        return a, b, a.data.reshape(()), b.data
    raise ShapeError(f'{op}: shape mismatch {a.shape} vs {b.shape}')


def _reduce_to(grad, shape):
    if grad.shape == tuple(shape):
        return grad
    return np.asarray(grad.sum()).reshape(shape)


def add(a, b):
    a, b, x, y = _operands('add', a, b)

    def _backward(grad):
        return _reduce_to(grad, a.shape), _reduce_to(grad, b.shape)
    return _make('add', x + y, (a, b), _backward)


def sub(a, b):
    a, b, x, y = _operands('sub', a, b)

    def _backward(grad):
        return _reduce_to(grad, a.shape), _reduce_to(-grad, b.shape)
    return _make('sub', x - y, (a, b), _backward)


def mul(a, b):
    a, b, x, y = _operands('mul', a, b)

    def _backward(grad):
        return _reduce_to(grad * y, a.shape), _reduce_to(grad * x, b.shape)
    return _make('mul', x * y, (a, b), _backward)


def div(a, b):
    a, b, x, y = _operands('div', a, b)

    def _backward(grad):
        return _reduce_to(grad / y, a.shape), _reduce_to(-grad * x / (y * y), b.shape)
    return _make('div', x / y, (a, b), _backward)


def neg(a):
    a = as_tensor(a)
    return _make('neg', -a.data, (a,), lambda grad: (-grad,))


def silu(a):
    a = as_tensor(a)
    sig = 1.0 / (1.0 + np.exp(-a.data))

    def _backward(grad):
        return (grad * sig * (1.0 + a.data * (1.0 - sig)),)
    return _make('silu', a.data * sig, (a,), _backward)


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a):
    """Tanh approximation of GELU."""
    a = as_tensor(a)
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x ** 3)
    tanh = np.tanh(inner)

    def _backward(grad):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x ** 2)
        local = 0.5 * (1.0 + tanh) + 0.5 * x * (1.0 - tanh ** 2) * d_inner
        return (grad * local,)
    return _make('gelu', 0.5 * x * (1.0 + tanh), (a,), _backward)


def abs_(a):
    a = as_tensor(a)
    return _make('abs', np.abs(a.data), (a,), lambda grad: (grad * np.sign(a.data),))


# contractions

def matmul(a, b):
    """
    Matrix product over the last two axes.

    ``b`` may be a plain matrix applied to every leading index of ``a``
    (token-wise linear layers); otherwise leading axes must match exactly.
    """
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f'matmul: operands need rank >= 2, got {a.shape} and {b.shape}')
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f'matmul: inner dims differ {a.shape} vs {b.shape}')
    if b.ndim != 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f'matmul: batch dims differ {a.shape} vs {b.shape}')

    def _backward(grad):
        if b.ndim == 2:
            grad_a = grad @ b.data.T
            grad_b = a.data.reshape(-1, a.shape[-1]).T @ grad.reshape(-1, grad.shape[-1])
        else:
            grad_a = grad @ np.swapaxes(b.data, -1, -2)
            grad_b = np.swapaxes(a.data, -1, -2) @ grad
        return grad_a, grad_b
    return _make('matmul', a.data @ b.data, (a, b), _backward)


def conv2d(x, weight, bias=None, stride=1, pad=0):
    """
    2-D cross-correlation with zero padding, NCHW layout.

    Raises:
        ShapeError: On channel mismatch, a kernel larger than the padded input,
            or a non-integral output extent.
    """
    x = as_tensor(x)
    weight = as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f'conv2d: expected NCHW input and OCkk weight, got {x.shape} and {weight.shape}')
    batch, channels, height, width = x.shape
    out_channels, weight_channels, kh, kw = weight.shape
    if channels != weight_channels:
        raise ShapeError(f'conv2d: input channels {x.shape} do not match weight {weight.shape}')
    padded_h, padded_w = height + 2 * pad, width + 2 * pad
    if kh > padded_h or kw > padded_w:
        raise ShapeError(f'conv2d: kernel {weight.shape} larger than padded input {x.shape}')
    if (padded_h - kh) % stride or (padded_w - kw) % stride:
        raise ShapeError(
            f'conv2d: non-integral output extent for input {x.shape}, '
            f'kernel {(kh, kw)}, stride {stride}, pad {pad}')
    out_h = (padded_h - kh) // stride + 1
    out_w = (padded_w - kw) // stride + 1

    padded = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    windows = np.lib.stride_tricks.sliding_window_view(padded, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(batch * out_h * out_w, -1)
    flat_weight = weight.data.reshape(out_channels, -1)
    out = (cols @ flat_weight.T).reshape(batch, out_h, out_w, out_channels)
    out = out.transpose(0, 3, 1, 2)

    inputs = (x, weight)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (out_channels,):
            raise ShapeError(f'conv2d: bias {bias.shape} does not match {out_channels} outputs')
        out = out + bias.data.reshape(1, -1, 1, 1)
        inputs = (x, weight, bias)

    def _backward(grad):
        grad_rows = grad.transpose(0, 2, 3, 1).reshape(-1, out_channels)
        grad_weight = (grad_rows.T @ cols).reshape(weight.shape)
        grad_cols = (grad_rows @ flat_weight).reshape(batch, out_h, out_w, channels, kh, kw)
        grad_padded = np.zeros(padded.shape, dtype=grad.dtype)
        for i in range(kh):
            for j in range(kw):
                grad_padded[:, :, i:i + stride * out_h:stride, j:j + stride * out_w:stride] += \
                    grad_cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        grad_x = grad_padded[:, :, pad:pad + height, pad:pad + width]
        if bias is None:
            return grad_x, grad_weight
        return grad_x, grad_weight, grad.sum(axis=(0, 2, 3))
    return _make('conv2d', np.ascontiguousarray(out), inputs, _backward)


# shape algebra

def reshape(x, shape):
    x = as_tensor(x)
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != x.size or -1 in shape:
        raise ShapeError(f'reshape: cannot view {x.shape} as {shape}')
    return _make('reshape', x.data.reshape(shape), (x,),
                 lambda grad: (grad.reshape(x.shape),))


def permute(x, axes):
    x = as_tensor(x)
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f'permute: axes {axes} invalid for shape {x.shape}')
    inverse = tuple(np.argsort(axes))
    return _make('permute', x.data.transpose(axes), (x,),
                 lambda grad: (grad.transpose(inverse),))


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    reference = tensors[0].shape
    for tensor in tensors[1:]:
        if len(tensor.shape) != len(reference) or any(
                s != r for k, (s, r) in enumerate(zip(tensor.shape, reference))
                if k != axis % len(reference)):
            raise ShapeError(f'concat: shape mismatch {reference} vs {tensor.shape} on axis {axis}')
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def _backward(grad):
        return tuple(np.split(grad, splits, axis=axis))
    return _make('concat', np.concatenate([t.data for t in tensors], axis=axis),
                 tensors, _backward)


def slice_(x, index):
    """Basic slicing (ints, slices, Ellipsis); backward scatters into zeros."""
    x = as_tensor(x)

    def _backward(grad):
        full = np.zeros(x.shape, dtype=grad.dtype)
        full[index] = grad
        return (full,)
    return _make('slice', np.array(x.data[index]), (x,), _backward)


def expand(x, shape):
    """Explicit broadcast of size-1 (or missing leading) axes to ``shape``."""
    x = as_tensor(x)
    shape = tuple(shape)
    if x.ndim > len(shape):
        raise ShapeError(f'expand: cannot expand {x.shape} to {shape}')
    padded = (1,) * (len(shape) - x.ndim) + x.shape
    for have, want in zip(padded, shape):
        if have not in (1, want):
            raise ShapeError(f'expand: cannot expand {x.shape} to {shape}')
    reduce_axes = tuple(k for k, (have, want) in enumerate(zip(padded, shape))
                        if have == 1 and want != 1)
    reduce_axes += tuple(range(len(shape) - x.ndim))

    def _backward(grad):
        reduced = grad.sum(axis=tuple(sorted(set(reduce_axes))), keepdims=True)
        return (reduced.reshape(x.shape),)
    return _make('expand', np.broadcast_to(x.data.reshape(padded), shape).copy(),
                 (x,), _backward)


def upsample_nearest2x(x):
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f'upsample_nearest2x: expected NCHW, got {x.shape}')
    batch, channels, height, width = x.shape

    def _backward(grad):
        return (grad.reshape(batch, channels, height, 2, width, 2).sum(axis=(3, 5)),)
    return _make('upsample', x.data.repeat(2, axis=2).repeat(2, axis=3), (x,), _backward)


def embedding(table, ids):
    """Row lookup ``table[ids]``; backward scatter-adds into the table."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)

    def _backward(grad):
        full = np.zeros(table.shape, dtype=grad.dtype)
        np.add.at(full, ids, grad)
        return (full,)
    return _make('embedding', table.data[ids], (table,), _backward)


# reductions and statistics

def _normalize_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def sum_(x, axis=None, keepdims=False):
    x = as_tensor(x)
    axes = _normalize_axis(axis, x.ndim)

    def _backward(grad):
        if not keepdims:
            grad = np.expand_dims(grad, axes)
        return (np.broadcast_to(grad, x.shape).copy(),)
    return _make('sum', np.asarray(x.data.sum(axis=axes, keepdims=keepdims)), (x,), _backward)


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    axes = _normalize_axis(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes]))
    return sum_(x, axes, keepdims) * (1.0 / count)


def softmax(x, axis=-1):
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    exp = np.exp(shifted)
    out = exp / exp.sum(axis=axis, keepdims=True)

    def _backward(grad):
        return (out * (grad - (grad * out).sum(axis=axis, keepdims=True)),)
    return _make('softmax', out, (x,), _backward)


def normalize(x, axis, eps=1e-5):
    """
    Standardizes ``x`` to zero mean and unit variance over ``axis``
    (population variance). Shared kernel of layer and group normalization.
    """
    x = as_tensor(x)
    axes = _normalize_axis(axis, x.ndim)
    mu = x.data.mean(axis=axes, keepdims=True)
    centered = x.data - mu
    var = (centered ** 2).mean(axis=axes, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std

    def _backward(grad):
        grad_mean = grad.mean(axis=axes, keepdims=True)
        proj = (grad * xhat).mean(axis=axes, keepdims=True)
        return (inv_std * (grad - grad_mean - xhat * proj),)
    return _make('normalize', xhat, (x,), _backward)


class GradCheckResult: # pylint: disable=too-few-public-methods
    """Outcome of a finite-difference comparison."""

    def __init__(self, errors):
        self.errors = np.asarray(errors, dtype=np.float64)
        self.max_error = float(self.errors.max()) if self.errors.size else 0.0
        self.median_error = float(np.median(self.errors)) if self.errors.size else 0.0

    def __repr__(self):
        return f'GradCheckResult(max={self.max_error:.3e}, median={self.median_error:.3e})'


def gradcheck(fn, tensors, h=1e-3, max_coords=None, floor=1e-3):
    """
    Compares autodiff gradients against central finite differences.

    ``fn`` takes no arguments and returns a scalar Tensor computed from
    ``tensors`` (leaf tensors, perturbed in place). Pass float64 leaves: the
    check runs at verification precision so the step ``h`` is not drowned by
    float32 rounding.

    Args:
        fn (callable): Closure producing the scalar loss.
        tensors (list[Tensor]): Leaves to differentiate against.
        h (float): Finite-difference step.
        max_coords (int, optional): Checks at most this many evenly spaced
            coordinates per tensor.
        floor (float): Denominator floor for the relative error of tiny gradients.

    Returns:
        GradCheckResult: Per-coordinate relative errors with max and median.
    """
    for tensor in tensors:
        tensor.requires_grad = True
        tensor.zero_grad()
    loss = fn()
    backward(loss)

    errors = []
    for tensor in tensors:
        analytic = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        flat = tensor.data.reshape(-1)
        coords = range(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.unique(np.linspace(0, flat.size - 1, max_coords).astype(np.int64))
        for k in coords:
            original = flat[k]
            flat[k] = original + h
            with no_grad():
                plus = float(fn().data.reshape(-1)[0])
            flat[k] = original - h
            with no_grad():
                minus = float(fn().data.reshape(-1)[0])
            flat[k] = original
            numeric = (plus - minus) / (2 * h)
            exact = float(analytic.reshape(-1)[k])
            errors.append(abs(exact - numeric) / max(abs(exact), abs(numeric), floor))
    return GradCheckResult(errors)
