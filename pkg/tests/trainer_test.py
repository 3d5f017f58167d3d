import re

import numpy as np
import pytest

from tempseg import _data, _model, _trainer
from tempseg._errors import (BadMagicError, CheckpointError, ConfigError,
                             DataError, DimensionError, DivergenceError,
                             TruncatedError, VersionError)
from tempseg._loss import LossConfig
from tempseg._model import ModelConfig, Variant
from tempseg._trainer import OptimizerState, TrainConfig


@pytest.fixture
def bundle():
    return _data.generate_synthetic(_data.SyntheticSpec(
        num_videos=3, num_classes=3, feature_dim=4,
        min_segment=3, max_segment=6, mean_segments=3,
        noise=0.2, test_fraction=0.34, seed=3,
    ))


def _model_config(variant=Variant.MSTCN, **kwargs):
    kwargs.setdefault('input_dim', 4)
    kwargs.setdefault('num_classes', 3)
    kwargs.setdefault('filters', 4)
    kwargs.setdefault('num_stages', 2)
    kwargs.setdefault('num_refinements', 1)
    kwargs.setdefault('layers_per_stage', 3)
    kwargs.setdefault('layers_generation', 3)
    kwargs.setdefault('layers_refinement', 2)
    return ModelConfig(variant=variant, **kwargs)


def _small_model(variant=Variant.MSTCN, seed=0, **kwargs):
    return _model.build_model(_model_config(variant, **kwargs), _trainer.init_generator(seed))


def _adam_oracle(x, gradients, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    m = v = 0.0
    for t, g in enumerate(gradients, start=1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        x = x - lr * m_hat / (np.sqrt(v_hat) + eps)
    return x


@pytest.mark.parametrize(argnames='seed', argvalues=(0, 1, 7))
def test_init_generator_is_independent_of_training_generator(seed):
    a = _trainer.init_generator(seed).random(5)
    b = np.random.default_rng(seed).random(5)
    assert not np.array_equal(a, b)
    np.testing.assert_array_equal(a, _trainer.init_generator(seed).random(5))


def test_init_generator_depends_on_seed():
    a = _trainer.init_generator(0).random(5)
    b = _trainer.init_generator(1).random(5)
    assert not np.array_equal(a, b)


def test_adam_step_with_zero_learning_rate_keeps_parameters():
    rng = np.random.default_rng(0)
    params = {'w': rng.standard_normal((3, 4)), 'b': rng.standard_normal(4).astype(np.float32)}
    exp_params = {name: array.copy() for name, array in params.items()}
    state = OptimizerState()
    for _ in range(5):
        grads = {name: rng.standard_normal(array.shape) for name, array in params.items()}
        _trainer.adam_step(params, grads, state, lr=0.0)
    for name, array in params.items():
        np.testing.assert_array_equal(array, exp_params[name])
    assert state.step == 5
    assert np.any(state.m['w'] != 0)


def test_adam_step_with_zero_gradient_keeps_parameters():
    params = {'w': np.array([1.0, -2.0, 3.0])}
    state = OptimizerState()
    _trainer.adam_step(params, {'w': np.zeros(3)}, state, lr=0.1)
    np.testing.assert_array_equal(params['w'], [1.0, -2.0, 3.0])
    assert state.step == 1


def test_adam_step_first_step_moves_by_learning_rate():
    params = {'w': np.array([0.0, 0.0, 0.0])}
    _trainer.adam_step(params, {'w': np.array([0.5, -20.0, 1e-3])}, OptimizerState(), lr=0.01)
    np.testing.assert_allclose(params['w'], [-0.01, 0.01, -0.01], rtol=1e-4)


def test_adam_step_matches_textbook_update():
    rng = np.random.default_rng(0)
    gradients = rng.standard_normal((100, 6))
    params = {'w': np.ones(6)}
    state = OptimizerState()
    for g in gradients:
        _trainer.adam_step(params, {'w': g}, state, lr=0.001)
    assert state.step == 100
    for i in range(6):
        assert params['w'][i] == pytest.approx(_adam_oracle(1.0, gradients[:, i], 0.001), rel=1e-10)


def test_adam_step_trajectory_on_quadratic_bowl():
    scales = np.array([1.0, 10.0, 0.1])
    params = {'x': np.array([2.0, -1.0, 5.0])}
    state = OptimizerState()
    x, m, v = params['x'].copy(), np.zeros(3), np.zeros(3)
    for t in range(1, 101):
        _trainer.adam_step(params, {'x': 2 * scales * params['x']}, state, lr=0.01)
        g = 2 * scales * x
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        x = x - 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    np.testing.assert_allclose(params['x'], x, rtol=0, atol=1e-6)


def test_adam_step_minimizes_quadratic():
    params = {'x': np.array([0.0])}
    state = OptimizerState()
    for _ in range(2000):
        _trainer.adam_step(params, {'x': 2 * (params['x'] - 3)}, state, lr=0.05)
    assert params['x'][0] == pytest.approx(3, abs=5e-2)


def test_adam_step_updates_in_place_and_keeps_dtype():
    w = np.ones((2, 2), dtype=np.float32)
    params = {'w': w}
    _trainer.adam_step(params, {'w': np.ones((2, 2))}, OptimizerState(), lr=0.5)
    assert params['w'] is w
    assert w.dtype == np.float32
    assert (w < 1).all()


@pytest.mark.parametrize(
    argnames='grads, exp_message',
    argvalues=(
        ({'b': np.zeros(2)}, 'Parameters and gradients differ: a, b'),
        ({'a': np.zeros(3)}, 'a: Gradient shape (3,) != parameter shape (2,)'),
    ),
)
def test_adam_step_rejects_gradients(grads, exp_message):
    with pytest.raises(DimensionError, match=rf'^{re.escape(exp_message)}$'):
        _trainer.adam_step({'a': np.zeros(2)}, grads, OptimizerState(), lr=0.1)


@pytest.mark.parametrize(
    argnames='kwargs, exp_message',
    argvalues=(
        ({'epochs': 0}, 'Number of epochs must be at least 1: 0'),
        ({'learning_rate': 0}, 'Learning rate must be positive: 0'),
        ({'learning_rate': -1e-3}, 'Learning rate must be positive: -0.001'),
    ),
)
def test_TrainConfig_validation(kwargs, exp_message):
    with pytest.raises(ConfigError, match=rf'^{re.escape(exp_message)}$'):
        TrainConfig(**kwargs)


def test_fit_is_deterministic(bundle):
    cfg = TrainConfig(epochs=2, learning_rate=0.01, seed=5)
    model_a, model_b = _small_model(), _small_model()
    history_a, state_a = _trainer.fit(model_a, bundle, 'train', cfg)
    history_b, state_b = _trainer.fit(model_b, bundle, 'train', cfg)
    assert [r.loss for r in history_a] == [r.loss for r in history_b]
    assert state_a.step == state_b.step == 2 * len(bundle.splits['train'])
    for name, array in model_a.named_parameters().items():
        np.testing.assert_array_equal(array, model_b.named_parameters()[name])


def test_fit_depends_on_seed(bundle):
    model_a, model_b = _small_model(), _small_model()
    _trainer.fit(model_a, bundle, 'train', TrainConfig(epochs=1, seed=1))
    _trainer.fit(model_b, bundle, 'train', TrainConfig(epochs=1, seed=2))
    assert any(
        not np.array_equal(array, model_b.named_parameters()[name])
        for name, array in model_a.named_parameters().items()
    )


@pytest.mark.parametrize(argnames='variant', argvalues=tuple(Variant), ids=str)
def test_fit_keeps_parameter_count(variant, bundle):
    model = _small_model(variant)
    exp_count = _model.count_parameters(model)
    exp_shapes = {name: array.shape for name, array in model.named_parameters().items()}
    counts = []
    _trainer.fit(model, bundle, 'train', TrainConfig(epochs=3),
                 on_epoch_end=lambda record: counts.append(_model.count_parameters(model)))
    assert counts == [exp_count] * 3
    assert {name: array.shape for name, array in model.named_parameters().items()} == exp_shapes


def test_fit_memorizes_noiseless_video():
    bundle = _data.generate_synthetic(_data.SyntheticSpec(
        num_videos=1, num_classes=4, feature_dim=8,
        min_segment=10, max_segment=30, mean_segments=6,
        noise=0.0, test_fraction=0.0, seed=5,
    ))
    model = _small_model(input_dim=8, num_classes=4, filters=8, dropout=0.0)
    _trainer.fit(model, bundle, 'train', TrainConfig(epochs=200, learning_rate=0.01))
    report = _trainer.evaluate(model, bundle, 'train')
    assert report.acc == 100
    assert report.edit == pytest.approx(100)
    assert (report.f1_10, report.f1_25, report.f1_50) == pytest.approx((100, 100, 100))


@pytest.mark.parametrize('variant', tuple(Variant), ids=str)
def test_fit_reduces_loss(variant, bundle):
    model = _small_model(variant, dropout=0.0)
    cfg = TrainConfig(epochs=15, learning_rate=0.01, shuffle=False)
    history, _ = _trainer.fit(model, bundle, 'train', cfg)
    assert len(history) == 15
    assert [r.epoch for r in history] == list(range(1, 16))
    assert history[-1].loss < history[0].loss


def test_fit_reports_epochs(bundle, mocker):
    on_epoch_end = mocker.Mock()
    history, _ = _trainer.fit(_small_model(), bundle, 'train', TrainConfig(epochs=2),
                              eval_split='test', on_epoch_end=on_epoch_end)
    assert on_epoch_end.call_args_list == [mocker.call(history[0]), mocker.call(history[1])]
    for record in history:
        assert record.report.n_videos == 1
        assert 0 <= record.accuracy <= 100


def test_fit_continues_from_state(bundle):
    model = _small_model()
    _, state = _trainer.fit(model, bundle, 'train', TrainConfig(epochs=1))
    _, state_continued = _trainer.fit(model, bundle, 'train', TrainConfig(epochs=1), state=state)
    assert state_continued is state
    assert state.step == 2 * len(bundle.splits['train'])


def test_fit_raises_on_divergence(bundle, mocker):
    mocker.patch('tempseg._trainer.total_loss_and_grad', return_value=(mocker.Mock(total=float('nan')), None))
    backward = mocker.patch('tempseg._trainer.backward')
    with pytest.raises(DivergenceError, match=r'^Epoch 1, video video0: Loss is nan$'):
        _trainer.fit(_small_model(), bundle, 'train', TrainConfig(shuffle=False))
    assert backward.call_args_list == []


def test_fit_rejects_empty_split(bundle):
    bundle.splits['empty'] = []
    with pytest.raises(DataError, match=r'^Split empty is empty$'):
        _trainer.fit(_small_model(), bundle, 'empty', TrainConfig())


@pytest.mark.parametrize(
    argnames='kwargs, exp_message',
    argvalues=(
        ({'num_classes': 4}, 'Model has 4 classes, dataset has 3'),
        ({'input_dim': 5}, 'Model expects 5 feature dimensions, dataset has 4'),
    ),
)
def test_evaluate_rejects_incompatible_model(kwargs, exp_message, bundle):
    with pytest.raises(CheckpointError, match=rf'^{re.escape(exp_message)}$'):
        _trainer.evaluate(_small_model(**kwargs), bundle, 'test')


def test_evaluate_does_not_depend_on_jobs(bundle):
    model = _small_model()
    bundle.splits['all'] = [s.id for s in bundle.samples]
    sequential = _trainer.predict_split(model, bundle, 'all')
    parallel = _trainer.predict_split(model, bundle, 'all', jobs=3)
    assert len(sequential) == len(parallel) == 3
    for (pred_a, gt_a), (pred_b, gt_b), sample in zip(sequential, parallel, bundle.samples):
        np.testing.assert_array_equal(pred_a, pred_b)
        np.testing.assert_array_equal(gt_a, sample.labels)
        np.testing.assert_array_equal(gt_b, sample.labels)
    assert _trainer.evaluate(model, bundle, 'all') == _trainer.evaluate(model, bundle, 'all', jobs=3)


def test_evaluate_is_not_affected_by_dropout(bundle):
    model = _small_model(dropout=0.5)
    assert _trainer.evaluate(model, bundle, 'test') == _trainer.evaluate(model, bundle, 'test')


@pytest.mark.parametrize('variant', tuple(Variant), ids=str)
def test_checkpoint_round_trip(variant, bundle, tmp_path):
    model = _small_model(variant)
    _, state = _trainer.fit(model, bundle, 'train', TrainConfig(epochs=1))
    path = tmp_path / 'model.ckpt'
    _trainer.save_checkpoint(path, model, state, seed=7, epoch=1, timestamp=False)
    loaded, loaded_state, info = _trainer.load_checkpoint(path)
    assert loaded.config == model.config
    assert info == {'train.seed': '7', 'train.epoch': '1'}
    params, loaded_params = model.named_parameters(), loaded.named_parameters()
    assert list(loaded_params) == list(params)
    for name, array in params.items():
        assert loaded_params[name].tobytes() == array.tobytes()
    assert loaded_state.step == state.step
    for name in state.m:
        assert loaded_state.m[name].tobytes() == state.m[name].tobytes()
        assert loaded_state.v[name].tobytes() == state.v[name].tobytes()
    assert _trainer.evaluate(loaded, bundle, 'test') == _trainer.evaluate(model, bundle, 'test')


def test_checkpoint_without_optimizer_state(tmp_path):
    path = tmp_path / 'model.ckpt'
    _trainer.save_checkpoint(path, _small_model(Variant.MSTCNPP_SHARED, num_refinements=2))
    loaded, state, info = _trainer.load_checkpoint(path)
    assert state is None
    assert set(info) == {'created'}
    assert loaded.config.variant is Variant.MSTCNPP_SHARED
    assert len(loaded.stages) == 3
    assert loaded.stages[1] is loaded.stages[2]


def test_load_checkpoint_rejects_bad_magic(tmp_path):
    path = tmp_path / 'model.ckpt'
    path.write_bytes(b'MSTF' + bytes(20))
    with pytest.raises(BadMagicError, match=r"Not a checkpoint: Bad magic bytes b'MSTF'$"):
        _trainer.load_checkpoint(path)


def test_load_checkpoint_rejects_version(tmp_path):
    path = tmp_path / 'model.ckpt'
    _trainer.save_checkpoint(path, _small_model())
    data = bytearray(path.read_bytes())
    data[4] = 9
    path.write_bytes(bytes(data))
    with pytest.raises(VersionError, match=r'Unsupported version: 9$'):
        _trainer.load_checkpoint(path)


@pytest.mark.parametrize('cut', (5, 20, -1), ids=('version', 'config', 'last byte'))
def test_load_checkpoint_rejects_truncated_file(cut, tmp_path):
    path = tmp_path / 'model.ckpt'
    _trainer.save_checkpoint(path, _small_model(), OptimizerState())
    path.write_bytes(path.read_bytes()[:cut])
    with pytest.raises(TruncatedError, match=rf'^{re.escape(str(path))}: Unexpected end of checkpoint$'):
        _trainer.load_checkpoint(path)


def test_load_checkpoint_rejects_trailing_data(tmp_path):
    path = tmp_path / 'model.ckpt'
    _trainer.save_checkpoint(path, _small_model())
    path.write_bytes(path.read_bytes() + b'\x00')
    with pytest.raises(CheckpointError, match=r'Trailing data after checkpoint$'):
        _trainer.load_checkpoint(path)


def test_load_checkpoint_reports_missing_file(tmp_path):
    path = tmp_path / 'missing.ckpt'
    with pytest.raises(DataError, match=r'Failed to read checkpoint: No such file or directory$'):
        _trainer.load_checkpoint(path)
