# -*- coding: utf-8 -*-
import math
import numpy as np


class TrainingDivergedError(RuntimeError):
    """
    Raised when a training loss turns NaN or infinite.

    Attributes:
        iteration (int): The iteration that produced the bad loss.
        checkpoint (str | None): Directory of the last good checkpoint, if any.
    """

    def __init__(self, stage, iteration, checkpoint=None):
        self.stage = stage
        self.iteration = iteration
        self.checkpoint = checkpoint
        message = f'{stage}: loss diverged (NaN/Inf) at iteration {iteration}'
        if checkpoint:
            message += f', last good checkpoint: {checkpoint}'
        else:
            message += ', no checkpoint was written before the failure'
        super().__init__(message)


class OptimizerState:
    """
    AdamW state for one parameter group.

    Moments are allocated lazily per parameter (keyed by position in the
    group) and share the parameter's shape and dtype.
    """

    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.01):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.step = 0
        self.first_moments = {}
        self.second_moments = {}


def adamw_step(params, state, lr):
    """
    One AdamW update with decoupled weight decay and bias-corrected moments.

    Parameters without a gradient are left untouched.

    Args:
        params (list[Tensor]): The group's parameters, in a fixed order.
        state (OptimizerState): Moments and hyperparameters of the group.
        lr (float): Learning rate for this step.
    """
    state.step += 1
    correction1 = 1.0 - state.beta1 ** state.step
    correction2 = 1.0 - state.beta2 ** state.step
    for index, param in enumerate(params):
        if param.grad is None:
            continue
        grad = param.grad.astype(param.dtype)
        if index not in state.first_moments:
            state.first_moments[index] = np.zeros_like(param.data)
            state.second_moments[index] = np.zeros_like(param.data)
        m = state.first_moments[index]
        v = state.second_moments[index]
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * grad * grad
        if state.weight_decay:
            param.data = param.data * (1.0 - lr * state.weight_decay)
        m_hat = m / correction1
        v_hat = v / correction2
        param.data = (param.data - lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(param.dtype)


def cosine_lr(iteration, total, lr_init, lr_min):
    """Cosine annealing from ``lr_init`` at 0 to ``lr_min`` at ``total``."""
    if total <= 0:
        return lr_init
    progress = min(max(iteration / total, 0.0), 1.0)
    return lr_min + 0.5 * (lr_init - lr_min) * (1.0 + math.cos(math.pi * progress))


def clip_grad_norm(params, max_norm):
    """
    Rescales gradients in place so their global L2 norm is at most ``max_norm``.

    Returns:
        float: The global norm before clipping.
    """
    total = 0.0
    for param in params:
        if param.grad is not None:
            total += float(np.sum(param.grad.astype(np.float64) ** 2))
    norm = math.sqrt(total)
    if max_norm and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for param in params:
            if param.grad is not None:
                param.grad = param.grad * scale
    return norm


class BatchSampler:
    """
    Deterministic minibatch order: a fresh permutation of the item indices
    per epoch, drawn from the supplied generator.
    """

    def __init__(self, count, batch_size, rng):
        if count <= 0:
            raise ValueError('cannot draw batches from an empty dataset')
        self.count = count
        self.batch_size = min(batch_size, count)
        self.rng = rng
        self._order = np.empty(0, dtype=np.int64)

    def next_indices(self):
        if self._order.size < self.batch_size:
            self._order = np.concatenate([self._order, self.rng.permutation(self.count)])
        indices, self._order = self._order[:self.batch_size], self._order[self.batch_size:]
        return indices
