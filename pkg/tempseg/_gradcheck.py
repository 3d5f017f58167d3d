"""
Compare analytic gradients with central finite differences

Every check builds a small random instance from its seed, computes analytic
gradients of a scalar objective and returns the largest relative error
against central differences. Smoothing losses are checked against an
objective in which the earlier frame of each pair is frozen at its
unperturbed value, which is the gradient convention of the losses. Entries
where the objective has a kink within epsilon of the evaluated point are
skipped.
"""

import numpy as np

from ._errors import DomainError
from ._layers import (DilatedResidualLayerParams, DualDilatedLayerParams,
                      HeadParams, classification_head,
                      classification_head_backward, dilated_residual_backward,
                      dilated_residual_forward, dual_dilated_backward,
                      dual_dilated_forward)
from ._loss import (LossConfig, _cross_entropy, _kl_smoothing, _t_mse,
                    total_loss_and_grad)
from ._model import ModelConfig, Variant, backward, build_model, forward
from ._tensor import (ConvParams, channel_log_softmax,
                      channel_log_softmax_backward, channel_softmax,
                      channel_softmax_backward, conv1d_backward,
                      conv1d_forward, dropout, dropout_backward,
                      log_probabilities, relu, relu_backward)

DEFAULT_EPSILON = 1e-5
THRESHOLD = 1e-4
MODEL_THRESHOLD = 1e-3

# Coarse smoke test in float32
SINGLE_EPSILON = 1e-2
SINGLE_THRESHOLD = 5e-2


def relative_error(analytic, numeric):
    """
    Largest ``|a - n| / max(|a| + |n|, 1e-6)`` over all entries

    Entries where `numeric` is NaN are ignored.
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    usable = ~np.isnan(numeric)
    if not np.any(usable):
        return 0.0
    analytic, numeric = analytic[usable], numeric[usable]
    scale = np.maximum(np.abs(analytic) + np.abs(numeric), 1e-6)
    return float(np.max(np.abs(analytic - numeric) / scale))


def numeric_gradient(f, array, epsilon, indexes=None, kink_tolerance=None):
    """
    Central differences of scalar function `f` w.r.t. `array`, which is
    perturbed in place

    :param indexes: Flat indexes to perturb; all entries by default
    :param kink_tolerance: If given, entries where the forward and backward
        differences disagree by more than this relative amount are NaN
        because `f` isn't differentiable within `epsilon` (e.g. a ReLU input
        crosses zero)
    """
    grad = np.zeros(array.shape, dtype=np.float64)
    flat = array.reshape(-1)
    assert np.shares_memory(flat, array)
    grad_flat = grad.reshape(-1)
    center = f()
    for i in (range(flat.size) if indexes is None else indexes):
        original = flat[i]
        flat[i] = original + epsilon
        plus = f()
        flat[i] = original - epsilon
        minus = f()
        flat[i] = original
        grad_flat[i] = (plus - minus) / (2 * epsilon)
        if kink_tolerance is not None:
            forward, backward = (plus - center) / epsilon, (center - minus) / epsilon
            if abs(forward - backward) > kink_tolerance * max(abs(forward) + abs(backward), 1e-6):
                grad_flat[i] = np.nan
    return grad


def _compare(f, pairs, epsilon):
    # `pairs` is a sequence of (array, analytic gradient)
    tolerance = threshold(None, pairs[0][0].dtype)
    return max(relative_error(analytic, numeric_gradient(f, array, epsilon, kink_tolerance=tolerance))
               for array, analytic in pairs)


def _conv_params(rng, kernel, in_channels, out_channels, dilation, dtype):
    return ConvParams.uniform(kernel, in_channels, out_channels, rng, dilation, dtype=dtype)


def _check_conv1d(rng, epsilon, dtype, kernel=3):
    dilation = int(rng.integers(1, 4)) if kernel == 3 else 1
    x = rng.standard_normal((4, 16)).astype(dtype)
    p = _conv_params(rng, kernel, 4, 5, dilation, dtype)
    g = rng.standard_normal((5, 16)).astype(dtype)
    grad_x, grad_w, grad_b = conv1d_backward(x, p, g)

    def f():
        return float(np.sum(g * conv1d_forward(x, p)))

    return _compare(f, ((x, grad_x), (p.weights, grad_w), (p.bias, grad_b)), epsilon)


def _check_conv1d_pointwise(rng, epsilon, dtype):
    return _check_conv1d(rng, epsilon, dtype, kernel=1)


def _check_relu(rng, epsilon, dtype):
    # Bounded away from the kink at 0
    x = (rng.choice((-1, 1), size=(3, 10)) * rng.uniform(0.1, 1, size=(3, 10))).astype(dtype)
    g = rng.standard_normal((3, 10)).astype(dtype)
    analytic = relu_backward(x, g)
    return _compare(lambda: float(np.sum(g * relu(x))), ((x, analytic),), epsilon)


def _check_softmax(rng, epsilon, dtype):
    logits = rng.standard_normal((5, 20)).astype(dtype)
    g = rng.standard_normal((5, 20)).astype(dtype)
    analytic = channel_softmax_backward(channel_softmax(logits), g)
    return _compare(lambda: float(np.sum(g * channel_softmax(logits))), ((logits, analytic),), epsilon)


def _check_log_softmax(rng, epsilon, dtype):
    logits = rng.standard_normal((5, 20)).astype(dtype)
    g = rng.standard_normal((5, 20)).astype(dtype)
    analytic = channel_log_softmax_backward(channel_softmax(logits), g)
    return _compare(lambda: float(np.sum(g * channel_log_softmax(logits))), ((logits, analytic),), epsilon)


def _check_softmax_cross_entropy(rng, epsilon, dtype):
    logits = rng.standard_normal((4, 12)).astype(dtype)
    labels = rng.integers(0, 4, size=12)
    _, analytic = _cross_entropy(channel_softmax(logits), labels, with_grad=True)

    def f():
        return _cross_entropy(channel_softmax(logits), labels, with_grad=False)[0]

    return _compare(f, ((logits, analytic),), epsilon)


def _check_t_mse(rng, epsilon, dtype, tau=4.0):
    # Large logits so some differences exceed tau and get truncated
    logits = (4 * rng.standard_normal((3, 10))).astype(dtype)
    probs = channel_softmax(logits)
    _, analytic = _t_mse(probs, tau, with_grad=True)
    frozen = log_probabilities(probs)[:, :-1].copy()
    C, T = probs.shape

    def f():
        current = log_probabilities(channel_softmax(logits))[:, 1:]
        return float(np.sum(np.minimum(np.abs(current - frozen), tau) ** 2) / (T * C))

    return _compare(f, ((logits, analytic),), epsilon)


def _check_kl(rng, epsilon, dtype):
    logits = rng.standard_normal((3, 10)).astype(dtype)
    probs = channel_softmax(logits)
    _, analytic = _kl_smoothing(probs, with_grad=True)
    frozen_probs = probs[:, :-1].copy()
    frozen_log_probs = log_probabilities(probs)[:, :-1].copy()
    T = probs.shape[1]

    def f():
        current = log_probabilities(channel_softmax(logits))[:, 1:]
        return float(np.sum(frozen_probs * (frozen_log_probs - current)) / T)

    return _compare(f, ((logits, analytic),), epsilon)


def _check_dropout(rng, epsilon, dtype):
    x = rng.standard_normal((4, 25)).astype(dtype)
    g = rng.standard_normal((4, 25)).astype(dtype)
    _, mask = dropout(x, 0.5, True, np.random.default_rng(int(rng.integers(2 ** 31))))
    analytic = dropout_backward(g, mask)
    return _compare(lambda: float(np.sum(g * x * mask)), ((x, analytic),), epsilon)


def _layer_arrays(params, grads):
    return list(zip((a for _, a in params.named_arrays('p')), (a for _, a in grads.named_arrays('p'))))


def _check_dilated_residual(rng, epsilon, dtype):
    D, T = 3, 12
    h = rng.standard_normal((D, T)).astype(dtype)
    p = DilatedResidualLayerParams.create(D, int(rng.choice((1, 2, 4))), 0.0, rng=rng, dtype=dtype)
    g = rng.standard_normal((D, T)).astype(dtype)
    cache = {}
    dilated_residual_forward(h, p, cache=cache)
    grad_h, grads = dilated_residual_backward(g, p, cache)

    def f():
        return float(np.sum(g * dilated_residual_forward(h, p)))

    return _compare(f, [(h, grad_h)] + _layer_arrays(p, grads), epsilon)


def _check_dual_dilated(rng, epsilon, dtype):
    D, T, depth = 3, 12, 3
    h = rng.standard_normal((D, T)).astype(dtype)
    p = DualDilatedLayerParams.create(D, int(rng.integers(1, depth + 1)), depth, 0.0, rng=rng, dtype=dtype)
    g = rng.standard_normal((D, T)).astype(dtype)
    cache = {}
    dual_dilated_forward(h, p, cache=cache)
    grad_h, grads = dual_dilated_backward(g, p, cache)

    def f():
        return float(np.sum(g * dual_dilated_forward(h, p)))

    return _compare(f, [(h, grad_h)] + _layer_arrays(p, grads), epsilon)


def _check_head(rng, epsilon, dtype):
    D, C, T = 4, 3, 10
    h = rng.standard_normal((D, T)).astype(dtype)
    p = HeadParams.create(D, C, rng=rng, dtype=dtype)
    labels = rng.integers(0, C, size=T)
    _, probs = classification_head(h, p)
    _, grad_logits = _cross_entropy(probs, labels, with_grad=True)
    grad_h, grads = classification_head_backward(h, p, grad_logits)

    def f():
        return _cross_entropy(classification_head(h, p)[1], labels, with_grad=False)[0]

    return _compare(f, [(h, grad_h)] + _layer_arrays(p, grads), epsilon)


def _frozen_total_loss(model, features, labels, cfg):
    # Total loss with the earlier frame of every smoothing pair frozen at the
    # current parameters
    frozen = [log_probabilities(p)[:, :-1].copy() for p in forward(model, features).probs]
    C, T = model.config.num_classes, features.shape[1]

    def f():
        total = 0.0
        for probs, previous in zip(forward(model, features).probs, frozen):
            total += _cross_entropy(probs, labels, with_grad=False)[0]
            current = log_probabilities(probs)[:, 1:]
            smooth = np.sum(np.minimum(np.abs(current - previous), cfg.tau) ** 2) / (T * C)
            total += cfg.lambda_ * float(smooth)
        return total

    return f


def check_model(rng, epsilon, dtype, variant=Variant.MSTCN, fraction=0.01):
    """
    End-to-end check of the total loss w.r.t. a random `fraction` of the
    parameters of a small model with dropout off
    """
    config = ModelConfig(variant=variant, input_dim=5, num_classes=4, filters=8,
                         num_stages=4, num_refinements=3, layers_per_stage=10,
                         layers_generation=11, layers_refinement=10, dropout=0.0)
    model = build_model(config, rng, dtype=dtype)
    T = 64
    features = rng.standard_normal((config.input_dim, T)).astype(dtype)
    labels = np.repeat(rng.integers(0, config.num_classes, size=8), T // 8)
    cfg = LossConfig(lambda_=0.15, tau=4.0)

    caches = []
    outputs = forward(model, features, caches=caches)
    _, grad_logits = total_loss_and_grad(outputs, labels, cfg)
    grads = backward(model, caches, grad_logits)

    f = _frozen_total_loss(model, features, labels, cfg)
    error = 0.0
    for name, array in model.named_parameters().items():
        count = max(1, int(round(array.size * fraction)))
        indexes = rng.choice(array.size, size=count, replace=False)
        numeric = numeric_gradient(f, array, epsilon, indexes=indexes,
                                   kink_tolerance=threshold('model', dtype))
        analytic = grads[name].reshape(-1)[indexes]
        error = max(error, relative_error(analytic, numeric.reshape(-1)[indexes]))
    return error


_CHECKS = {
    'conv1d': _check_conv1d,
    'conv1d_pointwise': _check_conv1d_pointwise,
    'relu': _check_relu,
    'softmax': _check_softmax,
    'log_softmax': _check_log_softmax,
    'softmax_cross_entropy': _check_softmax_cross_entropy,
    't_mse': _check_t_mse,
    'kl': _check_kl,
    'dropout': _check_dropout,
    'dilated_residual': _check_dilated_residual,
    'dual_dilated': _check_dual_dilated,
    'head': _check_head,
    'model': check_model,
}

PRIMITIVES = tuple(_CHECKS)


def threshold(primitive_id, dtype=np.float64):
    """Largest acceptable relative error for `primitive_id`"""
    if np.dtype(dtype) != np.float64:
        return SINGLE_THRESHOLD
    return MODEL_THRESHOLD if primitive_id == 'model' else THRESHOLD


def finite_difference_check(primitive_id, seed=0, epsilon=DEFAULT_EPSILON, dtype=np.float64):
    """
    Largest relative error between analytic and numeric gradients of
    `primitive_id` on a random instance drawn from `seed`

    :raise DomainError: if `primitive_id` is unknown
    """
    try:
        check = _CHECKS[primitive_id]
    except KeyError:
        raise DomainError(f'Unknown primitive: {primitive_id} (choose from {", ".join(PRIMITIVES)})')
    return check(np.random.default_rng(seed), epsilon, dtype)
