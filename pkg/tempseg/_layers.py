import dataclasses

import numpy as np

from ._errors import DimensionError, DomainError
from ._tensor import (ConvParams, channel_softmax, check_tensor,
                      conv1d_backward, conv1d_forward, dropout,
                      dropout_backward, relu, relu_backward)


@dataclasses.dataclass
class DilatedResidualLayerParams:
    """Dilated 3-tap convolution followed by ReLU and a 1x1 convolution"""

    dilated: ConvParams
    pointwise: ConvParams
    dropout_rate: float = 0.5

    kind = 'residual'

    def __post_init__(self):
        D = self.dilated.in_channels
        channels = (self.dilated.out_channels, self.pointwise.in_channels, self.pointwise.out_channels)
        if any(c != D for c in channels) or self.dilated.kernel != 3 or self.pointwise.kernel != 1:
            raise DimensionError(f'Inconsistent dilated residual layer: {self.describe()}')

    @classmethod
    def create(cls, channels, dilation, dropout_rate, rng=None, dtype=np.float32):
        make = conv_maker(rng, dtype)
        return cls(
            dilated=make(3, channels, channels, dilation),
            pointwise=make(1, channels, channels, 1),
            dropout_rate=dropout_rate,
        )

    @property
    def channels(self):
        return self.dilated.in_channels

    @property
    def dilations(self):
        return (self.dilated.dilation,)

    @property
    def size(self):
        return self.dilated.size + self.pointwise.size

    def describe(self):
        return (f'{self.dilated.kernel}x{self.dilated.in_channels}x{self.dilated.out_channels}'
                f' -> {self.pointwise.kernel}x{self.pointwise.in_channels}x{self.pointwise.out_channels}')

    def named_arrays(self, prefix):
        return self.dilated.named_arrays(f'{prefix}.dilated') + self.pointwise.named_arrays(f'{prefix}.pointwise')

    def zeros_like(self):
        return type(self)(self.dilated.zeros_like(), self.pointwise.zeros_like(), self.dropout_rate)


@dataclasses.dataclass
class DualDilatedLayerParams:
    """
    Two parallel dilated convolutions fused by a 1x1 convolution

    `branch1` looks at close neighbours in early layers and `branch2` at
    distant ones; their roles swap as the layer index grows.
    """

    branch1: ConvParams
    branch2: ConvParams
    fuse: ConvParams
    dropout_rate: float = 0.5

    kind = 'dual'

    def __post_init__(self):
        D = self.branch1.in_channels
        ok = (
            self.branch1.kernel == self.branch2.kernel == 3
            and self.fuse.kernel == 1
            and self.branch1.out_channels == D
            and self.branch2.in_channels == self.branch2.out_channels == D
            and self.fuse.in_channels == 2 * D
            and self.fuse.out_channels == D
        )
        if not ok:
            raise DimensionError('Inconsistent dual dilated layer: '
                                 f'branches {self.branch1.weights.shape}, {self.branch2.weights.shape}, '
                                 f'fuse {self.fuse.weights.shape}')

    @classmethod
    def create(cls, channels, index, depth, dropout_rate, rng=None, dtype=np.float32):
        make = conv_maker(rng, dtype)
        dilation1, dilation2 = ddl_dilations(index, depth)
        return cls(
            branch1=make(3, channels, channels, dilation1),
            branch2=make(3, channels, channels, dilation2),
            fuse=make(1, 2 * channels, channels, 1),
            dropout_rate=dropout_rate,
        )

    @property
    def channels(self):
        return self.branch1.in_channels

    @property
    def dilations(self):
        return (self.branch1.dilation, self.branch2.dilation)

    @property
    def size(self):
        return self.branch1.size + self.branch2.size + self.fuse.size

    def named_arrays(self, prefix):
        return (
            self.branch1.named_arrays(f'{prefix}.branch1')
            + self.branch2.named_arrays(f'{prefix}.branch2')
            + self.fuse.named_arrays(f'{prefix}.fuse')
        )

    def zeros_like(self):
        return type(self)(self.branch1.zeros_like(), self.branch2.zeros_like(),
                          self.fuse.zeros_like(), self.dropout_rate)


@dataclasses.dataclass
class HeadParams:
    """1x1 projection from feature maps to class logits"""

    proj: ConvParams

    kind = 'head'

    def __post_init__(self):
        if self.proj.kernel != 1:
            raise DimensionError(f'Classification head needs kernel size 1, not {self.proj.kernel}')

    @classmethod
    def create(cls, channels, num_classes, rng=None, dtype=np.float32):
        return cls(proj=conv_maker(rng, dtype)(1, channels, num_classes, 1))

    @property
    def num_classes(self):
        return self.proj.out_channels

    @property
    def size(self):
        return self.proj.size

    def named_arrays(self, prefix):
        return self.proj.named_arrays(f'{prefix}.proj')

    def zeros_like(self):
        return type(self)(self.proj.zeros_like())


def conv_maker(rng, dtype):
    # Zero parameters without `rng`, fan-in scaled uniform parameters with it
    def make(kernel, in_channels, out_channels, dilation):
        if rng is None:
            return ConvParams.zeros(kernel, in_channels, out_channels, dilation, dtype=dtype)
        else:
            return ConvParams.uniform(kernel, in_channels, out_channels, rng, dilation, dtype=dtype)
    return make


def receptive_field(l):
    """
    Number of frames one output frame sees after `l` dilated layers

    Valid for kernel size 3 with dilations doubling from 1.

    :raise DomainError: if `l` is smaller than 1
    """
    if l < 1:
        raise DomainError(f'Layer index must be at least 1: {l}')
    return 2 ** (l + 1) - 1


def ddl_dilations(l, depth):
    """
    Dilation factors ``(2 ** (l - 1), 2 ** (depth - l))`` of both branches of
    the dual dilated layer at index `l` (1-based) in a stage of `depth` layers
    """
    if not 1 <= l <= depth:
        raise DomainError(f'Layer index must be in [1, {depth}]: {l}')
    return 2 ** (l - 1), 2 ** (depth - l)


def dilated_residual_forward(h, p, training=False, rng=None, cache=None):
    """
    ``h + dropout(pointwise(relu(dilated(h))))``

    If `cache` is a :class:`dict`, it is filled with everything
    :func:`dilated_residual_backward` needs.
    """
    check_tensor(h, channels=p.channels)
    a = conv1d_forward(h, p.dilated)
    r = relu(a)
    z = conv1d_forward(r, p.pointwise)
    d, mask = dropout(z, p.dropout_rate, training, rng)
    if cache is not None:
        cache.update(h=h, a=a, r=r, mask=mask)
    return h + d


def dilated_residual_backward(grad_out, p, cache):
    """
    :return: ``(grad_h, grads)`` where `grads` is a
        :class:`DilatedResidualLayerParams` of gradients
    """
    grad_z = dropout_backward(grad_out, cache['mask'])
    grad_r, gw_pointwise, gb_pointwise = conv1d_backward(cache['r'], p.pointwise, grad_z)
    grad_a = relu_backward(cache['a'], grad_r)
    grad_h, gw_dilated, gb_dilated = conv1d_backward(cache['h'], p.dilated, grad_a)
    grads = DilatedResidualLayerParams(
        dilated=ConvParams(gw_dilated, gb_dilated, p.dilated.dilation),
        pointwise=ConvParams(gw_pointwise, gb_pointwise, 1),
        dropout_rate=p.dropout_rate,
    )
    return grad_out + grad_h, grads


def dual_dilated_forward(h, p, training=False, rng=None, cache=None):
    """
    ``h + dropout(fuse(relu([branch1(h); branch2(h)])))``

    Branch outputs are concatenated along channels with `branch1` first.
    """
    check_tensor(h, channels=p.channels)
    a = np.concatenate((conv1d_forward(h, p.branch1), conv1d_forward(h, p.branch2)), axis=0)
    r = relu(a)
    z = conv1d_forward(r, p.fuse)
    d, mask = dropout(z, p.dropout_rate, training, rng)
    if cache is not None:
        cache.update(h=h, a=a, r=r, mask=mask)
    return h + d


def dual_dilated_backward(grad_out, p, cache):
    D = p.channels
    grad_z = dropout_backward(grad_out, cache['mask'])
    grad_r, gw_fuse, gb_fuse = conv1d_backward(cache['r'], p.fuse, grad_z)
    grad_a = relu_backward(cache['a'], grad_r)
    grad_h1, gw_1, gb_1 = conv1d_backward(cache['h'], p.branch1, np.ascontiguousarray(grad_a[:D]))
    grad_h2, gw_2, gb_2 = conv1d_backward(cache['h'], p.branch2, np.ascontiguousarray(grad_a[D:]))
    grads = DualDilatedLayerParams(
        branch1=ConvParams(gw_1, gb_1, p.branch1.dilation),
        branch2=ConvParams(gw_2, gb_2, p.branch2.dilation),
        fuse=ConvParams(gw_fuse, gb_fuse, 1),
        dropout_rate=p.dropout_rate,
    )
    return grad_out + grad_h1 + grad_h2, grads


def layer_forward(h, p, training=False, rng=None, cache=None):
    if p.kind == 'dual':
        return dual_dilated_forward(h, p, training=training, rng=rng, cache=cache)
    else:
        return dilated_residual_forward(h, p, training=training, rng=rng, cache=cache)


def layer_backward(grad_out, p, cache):
    if p.kind == 'dual':
        return dual_dilated_backward(grad_out, p, cache)
    else:
        return dilated_residual_backward(grad_out, p, cache)


def classification_head(h, p):
    """
    :return: ``(logits, probs)``, both classes x time
    """
    logits = conv1d_forward(h, p.proj)
    return logits, channel_softmax(logits)


def classification_head_backward(h, p, grad_logits):
    """
    :return: ``(grad_h, grads)`` where `grads` is a :class:`HeadParams` of
        gradients
    """
    grad_h, gw, gb = conv1d_backward(h, p.proj, grad_logits)
    return grad_h, HeadParams(proj=ConvParams(gw, gb, 1))
