"""
Dense channel-major tensors and the primitives the networks are built from

A tensor is a 2-D :class:`numpy.ndarray` with one row per channel and one
column per time step. Every primitive has an explicit forward and backward
function; callers compose them and keep whatever the backward pass needs.
Functions keep the dtype of their inputs, so the same code runs in single
precision for training and in double precision for gradient checks.
"""

import dataclasses

import numpy as np

from ._errors import DimensionError

DTYPE = np.float32

# Probabilities are floored at this value before any logarithm
PROB_FLOOR = 1e-8
LOG_PROB_FLOOR = float(np.log(PROB_FLOOR))


def check_tensor(x, channels=None, name='input'):
    """
    Make sure `x` is a 2-D tensor and optionally has `channels` rows

    :raise DimensionError: if `x` doesn't qualify
    """
    if not isinstance(x, np.ndarray) or x.ndim != 2:
        shape = getattr(x, 'shape', None)
        raise DimensionError(f'{name} must be a channels x time tensor, not {shape}')
    if x.shape[1] < 1:
        raise DimensionError(f'{name} has no time steps')
    if channels is not None and x.shape[0] != channels:
        raise DimensionError(f'{name} has {x.shape[0]} channels, expected {channels}')
    return x


@dataclasses.dataclass
class ConvParams:
    """
    Weights and bias of a 1-D convolution

    `weights` has shape ``(kernel, in_channels, out_channels)`` and `bias` has
    shape ``(out_channels,)``. Kernel size is 1 or 3.
    """

    weights: np.ndarray
    bias: np.ndarray
    dilation: int = 1

    def __post_init__(self):
        if self.weights.ndim != 3:
            raise DimensionError(f'Convolution weights must have 3 dimensions, not {self.weights.ndim}')
        if self.kernel not in (1, 3):
            raise DimensionError(f'Unsupported kernel size: {self.kernel}')
        if self.bias.shape != (self.out_channels,):
            raise DimensionError(f'Bias shape {self.bias.shape} does not match '
                                 f'{self.out_channels} output channels')
        if self.dilation < 1:
            raise DimensionError(f'Dilation must be positive: {self.dilation}')

    @classmethod
    def zeros(cls, kernel, in_channels, out_channels, dilation=1, dtype=DTYPE):
        return cls(
            weights=np.zeros((kernel, in_channels, out_channels), dtype=dtype),
            bias=np.zeros(out_channels, dtype=dtype),
            dilation=dilation,
        )

    @classmethod
    def uniform(cls, kernel, in_channels, out_channels, rng, dilation=1, dtype=DTYPE):
        """Fan-in scaled uniform initialization, bound 1/sqrt(kernel * in_channels)"""
        bound = 1.0 / np.sqrt(kernel * in_channels)
        weights = rng.uniform(-bound, bound, size=(kernel, in_channels, out_channels))
        bias = rng.uniform(-bound, bound, size=out_channels)
        return cls(weights=weights.astype(dtype), bias=bias.astype(dtype), dilation=dilation)

    @property
    def kernel(self):
        return self.weights.shape[0]

    @property
    def in_channels(self):
        return self.weights.shape[1]

    @property
    def out_channels(self):
        return self.weights.shape[2]

    @property
    def size(self):
        return self.weights.size + self.bias.size

    def named_arrays(self, prefix):
        return [
            (f'{prefix}.weights', self.weights),
            (f'{prefix}.bias', self.bias),
        ]

    def zeros_like(self):
        """Gradient buffer mirroring this convolution"""
        return type(self)(
            weights=np.zeros_like(self.weights),
            bias=np.zeros_like(self.bias),
            dilation=self.dilation,
        )

    def astype(self, dtype):
        return type(self)(
            weights=self.weights.astype(dtype),
            bias=self.bias.astype(dtype),
            dilation=self.dilation,
        )


def conv_size(kernel, in_channels, out_channels):
    """Number of scalar parameters of a convolution"""
    return kernel * in_channels * out_channels + out_channels


def _padding(p):
    return p.dilation * (p.kernel - 1) // 2


def _taps(x, p):
    # Yield (k, view of x shifted by (k - 1) * dilation) with zeros beyond the
    # sequence boundaries.
    T = x.shape[1]
    pad = _padding(p)
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad)))
    for k in range(p.kernel):
        start = k * p.dilation
        yield k, x[:, start:start + T]


def conv1d_forward(x, p):
    """
    Acausal, length preserving 1-D convolution

    ``out[o, t] = bias[o] + sum(w[k, i, o] * x[i, t + (k - 1) * dilation])``
    for kernel 3 (``k`` in 0..2) and ``out = w[0].T @ x + bias`` for kernel 1.
    Taps outside the sequence read zero.

    :raise DimensionError: if the channels of `x` don't match `p`
    """
    check_tensor(x, channels=p.in_channels)
    out = np.empty((p.out_channels, x.shape[1]), dtype=np.result_type(x, p.weights))
    out[:] = p.bias[:, None]
    for k, tap in _taps(x, p):
        out += p.weights[k].T @ tap
    return out


def conv1d_backward(x, p, grad_out):
    """
    Gradients of ``sum(grad_out * conv1d_forward(x, p))``

    :return: ``(grad_input, grad_weights, grad_bias)``
    :raise DimensionError: if shapes are inconsistent
    """
    check_tensor(x, channels=p.in_channels)
    check_tensor(grad_out, channels=p.out_channels, name='gradient')
    if grad_out.shape[1] != x.shape[1]:
        raise DimensionError(f'Gradient has {grad_out.shape[1]} time steps, '
                             f'expected {x.shape[1]}')
    T = x.shape[1]
    pad = _padding(p)
    grad_weights = np.empty_like(p.weights)
    grad_padded = np.zeros((p.in_channels, T + 2 * pad), dtype=np.result_type(x, p.weights))
    for k, tap in _taps(x, p):
        grad_weights[k] = tap @ grad_out.T
        start = k * p.dilation
        grad_padded[:, start:start + T] += p.weights[k] @ grad_out
    grad_input = grad_padded[:, pad:pad + T]
    grad_bias = grad_out.sum(axis=1).astype(p.bias.dtype)
    return np.ascontiguousarray(grad_input), grad_weights, grad_bias


def relu(x):
    return np.maximum(x, 0)


def relu_backward(x, grad_out):
    return np.where(x > 0, grad_out, 0).astype(grad_out.dtype)


def channel_softmax(logits):
    """
    Turn each time column of `logits` into a probability distribution

    The column maximum is subtracted before exponentiation.
    """
    check_tensor(logits, name='logits')
    if logits.shape[0] < 2:
        raise DimensionError(f'Softmax needs at least 2 channels, not {logits.shape[0]}')
    e = np.exp(logits - logits.max(axis=0, keepdims=True))
    return e / e.sum(axis=0, keepdims=True)


def channel_log_softmax(logits):
    """
    Logarithm of :func:`channel_softmax`, floored at ``log(PROB_FLOOR)``
    """
    check_tensor(logits, name='logits')
    if logits.shape[0] < 2:
        raise DimensionError(f'Softmax needs at least 2 channels, not {logits.shape[0]}')
    z = logits - logits.max(axis=0, keepdims=True)
    log_probs = z - np.log(np.exp(z).sum(axis=0, keepdims=True))
    return np.maximum(log_probs, LOG_PROB_FLOOR)


def log_probabilities(probs):
    """Logarithm of `probs` floored at ``PROB_FLOOR``"""
    return np.log(np.maximum(probs, PROB_FLOOR))


def channel_softmax_backward(probs, grad_probs):
    """Map gradient w.r.t. softmax output to gradient w.r.t. logits"""
    return probs * (grad_probs - (grad_probs * probs).sum(axis=0, keepdims=True))


def channel_log_softmax_backward(probs, grad_log_probs):
    """
    Map gradient w.r.t. log-softmax output to gradient w.r.t. logits

    Entries of `grad_log_probs` that belong to floored log-probabilities must
    already be zero.
    """
    return grad_log_probs - probs * grad_log_probs.sum(axis=0, keepdims=True)


def dropout(x, rate, training, rng=None):
    """
    Inverted dropout

    In training mode, every element is zeroed with probability `rate` and
    survivors are scaled by ``1 / (1 - rate)``. Outside of training mode and
    for ``rate == 0``, `x` is returned unchanged.

    :return: ``(output, mask)`` where `mask` is the scaling that was applied
        to `x` or `None`
    """
    if not 0 <= rate < 1:
        raise ValueError(f'Dropout rate must be in [0, 1): {rate}')
    if not training or rate == 0:
        return x, None
    if rng is None:
        raise ValueError('Dropout in training mode needs a random number generator')
    keep = rng.random(x.shape) >= rate
    mask = keep.astype(x.dtype) / x.dtype.type(1 - rate)
    return x * mask, mask


def dropout_backward(grad_out, mask):
    if mask is None:
        return grad_out
    return grad_out * mask
