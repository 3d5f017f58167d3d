"""
Classification and smoothing losses

All losses take probabilities (classes x time). Gradients are returned w.r.t.
the logits the probabilities were computed from. Both smoothing losses treat
the earlier frame of every pair of consecutive frames as a constant: gradients
only flow through the later frame.
"""

import dataclasses
import enum
import typing

import numpy as np

from . import _warning
from ._errors import ConfigError, DimensionError, DomainError
from ._tensor import (PROB_FLOOR, channel_log_softmax_backward, check_tensor,
                      log_probabilities)


class Smoothing(enum.Enum):
    TMSE = 'tmse'
    KL = 'kl'
    NONE = 'none'

    def __str__(self):
        return self.value


@dataclasses.dataclass
class LossConfig:
    """
    :param lambda_: Weight of the smoothing loss
    :param tau: Truncation threshold of the smoothing loss
    :param smoothing: :class:`Smoothing` or its value
    """

    lambda_: float = 0.15
    tau: float = 4.0
    smoothing: Smoothing = Smoothing.TMSE

    def __post_init__(self):
        try:
            self.smoothing = Smoothing(str(self.smoothing))
        except ValueError:
            choices = ', '.join(str(s) for s in Smoothing)
            raise ConfigError(f'Unknown smoothing loss: {self.smoothing} (choose from {choices})')
        if not self.lambda_ >= 0:
            raise ConfigError(f'lambda must not be negative: {self.lambda_}')
        if not self.tau > 0:
            raise ConfigError(f'tau must be positive: {self.tau}')


@dataclasses.dataclass
class LossValue:
    """
    :param total: Sum of all stage losses
    :param per_stage: ``(classification, smoothing)`` per stage; smoothing is
        not weighted
    :param short_sequence: Whether smoothing was skipped because there was
        only one frame
    """

    total: float
    per_stage: typing.List[typing.Tuple[float, float]]
    short_sequence: bool = False


def _check_labels(labels, num_classes, length):
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != length:
        raise DimensionError(f'Expected {length} labels, got {labels.shape[0] if labels.ndim else 0}')
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        bad = labels[(labels < 0) | (labels >= num_classes)][0]
        raise DomainError(f'Label out of range [0, {num_classes}): {bad}')
    return labels.astype(np.int64)


def cross_entropy(probs, labels):
    """
    ``mean(-log(probs[labels[t], t]))`` with probabilities floored at
    ``PROB_FLOOR``
    """
    value, _ = _cross_entropy(probs, labels, with_grad=False)
    return value


def _cross_entropy(probs, labels, with_grad):
    check_tensor(probs, name='probabilities')
    C, T = probs.shape
    labels = _check_labels(labels, C, T)
    frames = np.arange(T)
    picked = probs[labels, frames]
    value = float(-np.mean(np.log(np.maximum(picked, PROB_FLOOR))))
    if not with_grad:
        return value, None
    # Softmax and cross entropy fused: (p - onehot) / T
    grad = probs.copy()
    grad[labels, frames] -= 1
    grad[:, picked <= PROB_FLOOR] = 0
    return value, grad / T


def _short_sequence(probs, name):
    if probs.shape[1] < 2:
        _warning('%s needs at least 2 frames, got %d', name, probs.shape[1])
        return True
    return False


def t_mse(probs, tau=4.0):
    """
    Truncated mean squared error over consecutive frame-wise log-probabilities

    ``sum(min(|log y[c, t] - log y[c, t - 1]|, tau) ** 2) / (T * C)`` over
    ``t >= 1``. Sequences with fewer than 2 frames yield 0.
    """
    value, _ = _t_mse(probs, tau, with_grad=False)
    return value


def _t_mse(probs, tau, with_grad):
    check_tensor(probs, name='probabilities')
    if _short_sequence(probs, 'T-MSE'):
        return 0.0, np.zeros_like(probs) if with_grad else None
    C, T = probs.shape
    log_probs = log_probabilities(probs)
    delta = log_probs[:, 1:] - log_probs[:, :-1]
    truncated = np.minimum(np.abs(delta), tau)
    value = float(np.sum(truncated ** 2) / (T * C))
    if not with_grad:
        return value, None
    grad_log_probs = np.zeros_like(probs)
    inside = (np.abs(delta) < tau) & (probs[:, 1:] > PROB_FLOOR)
    grad_log_probs[:, 1:] = np.where(inside, 2 * delta / (T * C), 0)
    return value, channel_log_softmax_backward(probs, grad_log_probs)


def kl_smoothing(probs):
    """
    Kullback-Leibler divergence of every frame's distribution from the one
    before it

    ``sum(y[c, t - 1] * (log y[c, t - 1] - log y[c, t])) / T`` over ``t >= 1``.
    Sequences with fewer than 2 frames yield 0.
    """
    value, _ = _kl_smoothing(probs, with_grad=False)
    return value


def _kl_smoothing(probs, with_grad):
    check_tensor(probs, name='probabilities')
    if _short_sequence(probs, 'KL smoothing'):
        return 0.0, np.zeros_like(probs) if with_grad else None
    T = probs.shape[1]
    log_probs = log_probabilities(probs)
    previous = probs[:, :-1]
    value = float(np.sum(previous * (log_probs[:, :-1] - log_probs[:, 1:])) / T)
    if not with_grad:
        return value, None
    grad_log_probs = np.zeros_like(probs)
    grad_log_probs[:, 1:] = np.where(probs[:, 1:] > PROB_FLOOR, -previous / T, 0)
    return value, channel_log_softmax_backward(probs, grad_log_probs)


def _smoothing(probs, cfg, with_grad):
    if cfg.smoothing is Smoothing.TMSE:
        return _t_mse(probs, cfg.tau, with_grad)
    elif cfg.smoothing is Smoothing.KL:
        return _kl_smoothing(probs, with_grad)
    else:
        return 0.0, np.zeros_like(probs) if with_grad else None


def _total(probs_list, labels, cfg, with_grad):
    if not probs_list:
        raise DimensionError('No stage outputs')
    per_stage = []
    grads = []
    short = False
    for probs in probs_list:
        cls, grad_cls = _cross_entropy(probs, labels, with_grad)
        smooth, grad_smooth = _smoothing(probs, cfg, with_grad)
        short = short or (cfg.smoothing is not Smoothing.NONE and probs.shape[1] < 2)
        per_stage.append((cls, smooth))
        if with_grad:
            grads.append(grad_cls + probs.dtype.type(cfg.lambda_) * grad_smooth)
    total = float(sum(cls + cfg.lambda_ * smooth for cls, smooth in per_stage))
    return LossValue(total=total, per_stage=per_stage, short_sequence=short), grads


def total_loss(stage_outputs, labels, cfg):
    """
    Sum over stages of ``classification + lambda * smoothing``

    :param stage_outputs: :class:`~.StageOutputs` or sequence of probability
        tensors
    :param labels: Ground truth class index per frame
    :param cfg: :class:`LossConfig`

    :return: :class:`LossValue`
    """
    probs_list = getattr(stage_outputs, 'probs', stage_outputs)
    loss, _ = _total(probs_list, labels, cfg, with_grad=False)
    return loss


def total_loss_and_grad(stage_outputs, labels, cfg):
    """
    Same as :func:`total_loss` but also return the gradient of the total
    loss w.r.t. every stage's logits

    :return: ``(LossValue, gradients)``
    """
    return _total(stage_outputs.probs, labels, cfg, with_grad=True)
