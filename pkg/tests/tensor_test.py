import re

import numpy as np
import pytest

from tempseg import _tensor
from tempseg._errors import DimensionError
from tempseg._tensor import ConvParams


def _conv(weights, bias=0.0, dilation=1, in_channels=1, out_channels=1):
    weights = np.asarray(weights, dtype=np.float64).reshape(-1, in_channels, out_channels)
    bias = np.full(out_channels, bias, dtype=np.float64)
    return ConvParams(weights=weights, bias=bias, dilation=dilation)


def _conv_oracle(x, p):
    # Direct triple loop over output channels, time steps and taps
    D_in, T = x.shape
    out = np.zeros((p.out_channels, T))
    offsets = [0] if p.kernel == 1 else [-p.dilation, 0, p.dilation]
    for o in range(p.out_channels):
        for t in range(T):
            total = p.bias[o]
            for k, offset in enumerate(offsets):
                if 0 <= t + offset < T:
                    for i in range(D_in):
                        total += p.weights[k, i, o] * x[i, t + offset]
            out[o, t] = total
    return out


@pytest.mark.parametrize(
    argnames='weights, dilation, exp_output',
    argvalues=(
        ([0, 1, 0], 1, [1, 2, 3]),
        ([1, 0, 0], 1, [0, 1, 2]),
        ([1, 0, 0], 2, [0, 0, 1]),
        ([0, 0, 1], 1, [2, 3, 0]),
        ([1, 1, 1], 1, [3, 6, 5]),
    ),
    ids=lambda v: str(v),
)
def test_conv1d_forward_hand_cases(weights, dilation, exp_output):
    x = np.array([[1, 2, 3]], dtype=np.float64)
    out = _tensor.conv1d_forward(x, _conv(weights, dilation=dilation))
    assert out.tolist() == [exp_output]


@pytest.mark.parametrize('kernel, dilation', ((3, 1), (3, 2), (3, 4), (1, 1)))
def test_conv1d_forward_matches_direct_loop(kernel, dilation):
    rng = np.random.default_rng(3)
    x = rng.standard_normal((4, 16))
    p = ConvParams.uniform(kernel, 4, 5, rng, dilation, dtype=np.float64)
    np.testing.assert_allclose(_tensor.conv1d_forward(x, p), _conv_oracle(x, p), rtol=1e-12, atol=1e-12)


def test_conv1d_forward_preserves_length_with_large_dilation():
    x = np.ones((2, 5))
    p = ConvParams.uniform(3, 2, 3, np.random.default_rng(0), dilation=512)
    out = _tensor.conv1d_forward(x, p)
    assert out.shape == (3, 5)
    # Both outer taps only read padding
    np.testing.assert_allclose(out, p.weights[1].T @ x + p.bias[:, None], rtol=1e-6)


def test_conv1d_forward_rejects_channel_mismatch():
    p = ConvParams.zeros(3, 4, 5)
    with pytest.raises(DimensionError, match=r'^input has 3 channels, expected 4$'):
        _tensor.conv1d_forward(np.zeros((3, 10), dtype=np.float32), p)


@pytest.mark.parametrize(
    argnames='x, exp_message',
    argvalues=(
        (np.zeros(10), 'input must be a channels x time tensor, not (10,)'),
        (np.zeros((2, 3, 4)), 'input must be a channels x time tensor, not (2, 3, 4)'),
        (np.zeros((2, 0)), 'input has no time steps'),
        ([[1, 2]], 'input must be a channels x time tensor, not None'),
    ),
    ids=('1d', '3d', 'empty', 'list'),
)
def test_check_tensor_rejects(x, exp_message):
    with pytest.raises(DimensionError, match=rf'^{re.escape(exp_message)}$'):
        _tensor.check_tensor(x)


@pytest.mark.parametrize(
    argnames='weights, bias, exp_message',
    argvalues=(
        (np.zeros((3, 2)), np.zeros(2), 'Convolution weights must have 3 dimensions, not 2'),
        (np.zeros((2, 2, 2)), np.zeros(2), 'Unsupported kernel size: 2'),
        (np.zeros((3, 2, 4)), np.zeros(2), 'Bias shape (2,) does not match 4 output channels'),
    ),
)
def test_ConvParams_validation(weights, bias, exp_message):
    with pytest.raises(DimensionError, match=rf'^{re.escape(exp_message)}$'):
        ConvParams(weights=weights, bias=bias)


def test_ConvParams_uniform_bound_and_dtype():
    p = ConvParams.uniform(3, 64, 64, np.random.default_rng(1))
    bound = 1 / np.sqrt(3 * 64)
    assert p.weights.dtype == np.float32 and p.bias.dtype == np.float32
    assert np.abs(p.weights).max() <= bound * (1 + 1e-6)
    assert np.abs(p.bias).max() <= bound * (1 + 1e-6)
    assert p.size == _tensor.conv_size(3, 64, 64) == 12352


def test_conv1d_backward_zero_gradient():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((4, 16))
    p = ConvParams.uniform(3, 4, 5, rng, 2, dtype=np.float64)
    grad_x, grad_w, grad_b = _tensor.conv1d_backward(x, p, np.zeros((5, 16)))
    assert not grad_x.any() and not grad_w.any() and not grad_b.any()


def test_conv1d_backward_identity_kernel():
    G = np.array([[0.5, -1.0, 2.0, 3.0]])
    grad_x, _, grad_b = _tensor.conv1d_backward(np.ones((1, 4)), _conv([0, 1, 0]), G)
    np.testing.assert_array_equal(grad_x, G)
    np.testing.assert_array_equal(grad_b, [4.5])


def test_conv1d_backward_matches_transposed_forward():
    # <conv(x), g> == <x, grad_x> for a bias-free convolution
    rng = np.random.default_rng(5)
    x = rng.standard_normal((3, 20))
    g = rng.standard_normal((6, 20))
    p = ConvParams(weights=rng.standard_normal((3, 3, 6)), bias=np.zeros(6), dilation=4)
    grad_x, _, _ = _tensor.conv1d_backward(x, p, g)
    assert np.sum(_tensor.conv1d_forward(x, p) * g) == pytest.approx(np.sum(x * grad_x), rel=1e-12)


def test_conv1d_backward_rejects_time_mismatch():
    p = ConvParams.zeros(3, 2, 2, dtype=np.float64)
    with pytest.raises(DimensionError, match=r'^Gradient has 4 time steps, expected 5$'):
        _tensor.conv1d_backward(np.zeros((2, 5)), p, np.zeros((2, 4)))


def test_relu():
    x = np.array([[-1.0, 0.0, 2.0]])
    assert _tensor.relu(x).tolist() == [[0.0, 0.0, 2.0]]
    assert _tensor.relu_backward(x, np.ones_like(x)).tolist() == [[0.0, 0.0, 1.0]]
    positive = np.array([[0.5, 1.5]])
    np.testing.assert_array_equal(_tensor.relu(positive), positive)


@pytest.mark.parametrize(
    argnames='column, exp_probs',
    argvalues=(
        ([0.0, 0.0], [0.5, 0.5]),
        ([np.log(2), 0.0], [2 / 3, 1 / 3]),
        ([1000.0, 0.0], [1.0, 0.0]),
    ),
)
def test_channel_softmax_analytic(column, exp_probs):
    probs = _tensor.channel_softmax(np.array(column)[:, None])
    np.testing.assert_allclose(probs[:, 0], exp_probs, atol=1e-12)


def test_channel_softmax_matches_exp_sum():
    logits = np.random.default_rng(2).standard_normal((5, 20))
    e = np.exp(logits)
    np.testing.assert_allclose(_tensor.channel_softmax(logits), e / e.sum(axis=0), rtol=1e-12)
    np.testing.assert_allclose(_tensor.channel_log_softmax(logits), np.log(e / e.sum(axis=0)), rtol=1e-10)


def test_channel_softmax_needs_two_channels():
    with pytest.raises(DimensionError, match=r'^Softmax needs at least 2 channels, not 1$'):
        _tensor.channel_softmax(np.zeros((1, 3)))


def test_channel_log_softmax_is_floored():
    log_probs = _tensor.channel_log_softmax(np.array([[0.0], [-100.0]]))
    assert log_probs[1, 0] == pytest.approx(_tensor.LOG_PROB_FLOOR)
    assert _tensor.log_probabilities(np.array([[0.0]]))[0, 0] == pytest.approx(np.log(1e-8))


@pytest.mark.parametrize('training', (True, False))
def test_dropout_rate_zero_is_identity(training):
    x = np.arange(6, dtype=np.float32).reshape(2, 3)
    out, mask = _tensor.dropout(x, 0.0, training, np.random.default_rng(0))
    assert out is x and mask is None


def test_dropout_evaluation_mode_is_identity():
    x = np.arange(6, dtype=np.float32).reshape(2, 3)
    out, mask = _tensor.dropout(x, 0.5, False)
    assert out is x and mask is None


@pytest.mark.parametrize('seed', range(10))
def test_dropout_preserves_mean(seed):
    x = np.ones((64, 1000), dtype=np.float32)
    out, mask = _tensor.dropout(x, 0.5, True, np.random.default_rng(seed))
    assert out.mean() == pytest.approx(1.0, rel=0.05)
    assert set(np.unique(mask).tolist()) == {0.0, 2.0}
    np.testing.assert_array_equal(_tensor.dropout_backward(np.ones_like(x), mask), mask)


def test_dropout_needs_rng_in_training_mode():
    with pytest.raises(ValueError, match=r'^Dropout in training mode needs a random number generator$'):
        _tensor.dropout(np.ones((2, 2)), 0.5, True)


@pytest.mark.parametrize('rate', (-0.1, 1.0))
def test_dropout_rejects_rate(rate):
    with pytest.raises(ValueError, match=rf'^Dropout rate must be in \[0, 1\): {rate}$'):
        _tensor.dropout(np.ones((2, 2)), rate, False)
