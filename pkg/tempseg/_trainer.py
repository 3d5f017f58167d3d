import concurrent.futures
import dataclasses
import datetime
import struct
import typing

import numpy as np

from . import _config, _debug, _info
from ._errors import (BadMagicError, CheckpointError, ConfigError, DataError,
                      DimensionError, DivergenceError, TruncatedError,
                      VersionError)
from ._loss import LossConfig, total_loss_and_grad
from ._metrics import EvalReport, evaluate_set
from ._model import ModelConfig, backward, build_model, forward, predict_labels

CHECKPOINT_MAGIC = b'MSCK'
CHECKPOINT_VERSION = 1


def init_generator(seed):
    """
    Random number generator for parameter initialization of a training run
    with `seed`

    It is independent of the generator :func:`fit` uses for video order and
    dropout.
    """
    init_sequence, = np.random.SeedSequence(seed).spawn(1)
    return np.random.default_rng(init_sequence)


@dataclasses.dataclass
class OptimizerState:
    """First and second moment estimates per parameter name and step counter"""

    m: typing.Dict[str, np.ndarray] = dataclasses.field(default_factory=dict)
    v: typing.Dict[str, np.ndarray] = dataclasses.field(default_factory=dict)
    step: int = 0


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """
    Apply one bias-corrected Adam update to `params` in place

    :param params: :class:`dict` that maps names to arrays
    :param grads: :class:`dict` with the same keys and shapes as `params`
    :param state: :class:`OptimizerState`, updated in place

    :raise DimensionError: if `grads` doesn't mirror `params`
    """
    if set(params) != set(grads):
        missing = sorted(set(params) ^ set(grads))
        raise DimensionError(f'Parameters and gradients differ: {", ".join(missing)}')
    for name, param in params.items():
        if grads[name].shape != param.shape:
            raise DimensionError(f'{name}: Gradient shape {grads[name].shape} != parameter shape {param.shape}')

    state.step += 1
    bias_correction1 = 1.0 - beta1 ** state.step
    bias_correction2 = 1.0 - beta2 ** state.step
    step_size = lr / bias_correction1

    for name, param in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(param)
            state.v[name] = np.zeros_like(param)
        m, v = state.m[name], state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        denominator = np.sqrt(v / bias_correction2) + eps
        param -= (step_size * m / denominator).astype(param.dtype)
    return params, state


@dataclasses.dataclass
class TrainConfig:
    """
    :param epochs: Number of passes over the training split
    :param learning_rate: Adam learning rate
    :param loss: :class:`~.LossConfig`
    :param seed: Seed for video order and dropout
    :param shuffle: Whether video order is shuffled every epoch
    """

    epochs: int = 50
    learning_rate: float = 0.0005
    loss: LossConfig = dataclasses.field(default_factory=LossConfig)
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f'Number of epochs must be at least 1: {self.epochs}')
        if not self.learning_rate > 0:
            raise ConfigError(f'Learning rate must be positive: {self.learning_rate}')


@dataclasses.dataclass
class EpochRecord:
    epoch: int
    loss: float
    accuracy: float
    report: typing.Optional[EvalReport] = None


def _check_compatible(model, bundle):
    if bundle.num_classes != model.config.num_classes:
        raise CheckpointError(f'Model has {model.config.num_classes} classes, '
                              f'dataset has {bundle.num_classes}')
    if bundle.samples and bundle.feature_dim != model.config.input_dim:
        raise CheckpointError(f'Model expects {model.config.input_dim} feature dimensions, '
                              f'dataset has {bundle.feature_dim}')


def fit(model, bundle, split, cfg, state=None, eval_split=None, on_epoch_end=None):
    """
    Train `model` on `split` of `bundle`

    Every video is one optimization step at full temporal resolution. The loss
    is :func:`~.total_loss` over all stage outputs and dropout is active.

    :param state: :class:`OptimizerState` to continue from
    :param eval_split: Name of split that is evaluated after every epoch
    :param on_epoch_end: Callable that gets each :class:`EpochRecord`

    :return: ``(history, state)`` where `history` is a list of
        :class:`EpochRecord`
    :raise DataError: if `split` is empty
    :raise DivergenceError: if the loss becomes non-finite
    """
    samples = bundle.split(split)
    if not samples:
        raise DataError(f'Split {split} is empty')
    _check_compatible(model, bundle)

    rng = np.random.default_rng(cfg.seed)
    state = state if state is not None else OptimizerState()
    params = model.named_parameters()
    history = []
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(samples)) if cfg.shuffle else np.arange(len(samples))
        losses = []
        correct = frames = 0
        for index in order:
            sample = samples[index]
            caches = []
            outputs = forward(model, sample.features, training=True, rng=rng, caches=caches)
            loss, grad_logits = total_loss_and_grad(outputs, sample.labels, cfg.loss)
            if not np.isfinite(loss.total):
                raise DivergenceError(f'Epoch {epoch}, video {sample.id}: Loss is {loss.total}')
            grads = backward(model, caches, grad_logits)
            adam_step(params, grads, state, cfg.learning_rate)
            losses.append(loss.total)
            correct += int(np.sum(outputs.final_probs.argmax(axis=0) == sample.labels))
            frames += sample.num_frames

        record = EpochRecord(epoch=epoch, loss=float(np.mean(losses)), accuracy=100 * correct / frames)
        if eval_split is not None:
            record.report = evaluate(model, bundle, eval_split)
        _info('Epoch %d/%d: loss=%.6f acc=%.2f', epoch, cfg.epochs, record.loss, record.accuracy)
        history.append(record)
        if on_epoch_end is not None:
            on_epoch_end(record)
    return history, state


def evaluate(model, bundle, split, background_labels=(), jobs=1):
    """
    Predict every video in `split` with dropout off and evaluate predictions

    :param background_labels: Class indexes ignored by segment metrics
    :param jobs: Number of videos predicted in parallel; the result does not
        depend on it

    :return: :class:`~.EvalReport`
    """
    return evaluate_set(predict_split(model, bundle, split, jobs=jobs), background_labels)


def predict_split(model, bundle, split, jobs=1):
    """List of ``(predicted labels, ground truth labels)`` in split order"""
    samples = bundle.split(split)
    if not samples:
        raise DataError(f'Split {split} is empty')
    _check_compatible(model, bundle)

    def predict(sample):
        return predict_labels(model, sample.features), sample.labels

    if jobs > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as executor:
            return list(executor.map(predict, samples))
    return [predict(sample) for sample in samples]


# Checkpoint layout (little-endian):
#   magic, u32 version, u32 + UTF-8 config document, u32 blob count, blobs,
#   u8 optimizer flag [, u64 step, u32 blob count, blobs]
# Blob: u32 + UTF-8 name, u32 rank, u64 per dimension, float32 payload

def _pack_blob(name, array):
    encoded = name.encode('utf-8')
    parts = [struct.pack('<I', len(encoded)), encoded, struct.pack('<I', array.ndim)]
    parts.extend(struct.pack('<Q', dim) for dim in array.shape)
    parts.append(np.ascontiguousarray(array, dtype='<f4').tobytes())
    return b''.join(parts)


class _Reader:
    def __init__(self, data, filepath):
        self._data = data
        self._offset = 0
        self._filepath = filepath

    def read(self, size):
        if self._offset + size > len(self._data):
            raise TruncatedError('Unexpected end of checkpoint', filepath=self._filepath)
        chunk = self._data[self._offset:self._offset + size]
        self._offset += size
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.read(struct.calcsize(fmt)))

    def string(self):
        length, = self.unpack('<I')
        try:
            return self.read(length).decode('utf-8')
        except UnicodeDecodeError as e:
            raise DataError(f'Invalid string in checkpoint: {e}', filepath=self._filepath)

    def blob(self):
        name = self.string()
        rank, = self.unpack('<I')
        shape = tuple(self.unpack(f'<{rank}Q')) if rank else ()
        count = int(np.prod(shape)) if shape else 1
        array = np.frombuffer(self.read(count * 4), dtype='<f4').reshape(shape)
        return name, array.astype(np.float32)

    @property
    def exhausted(self):
        return self._offset == len(self._data)


def save_checkpoint(path, model, state=None, seed=None, epoch=None, timestamp=True):
    """
    Write configuration and parameters of `model` and optionally the
    optimizer `state` to `path`
    """
    document = {f'model.{key}': value for key, value in model.config.to_dict().items()}
    if seed is not None:
        document['train.seed'] = seed
    if epoch is not None:
        document['train.epoch'] = epoch
    if timestamp:
        document['created'] = datetime.datetime.now(datetime.timezone.utc).isoformat()
    config_bytes = _config.format_kv(document).encode('utf-8')

    params = model.named_parameters()
    parts = [
        CHECKPOINT_MAGIC,
        struct.pack('<I', CHECKPOINT_VERSION),
        struct.pack('<I', len(config_bytes)), config_bytes,
        struct.pack('<I', len(params)),
    ]
    parts.extend(_pack_blob(name, array) for name, array in params.items())
    if state is None:
        parts.append(struct.pack('<B', 0))
    else:
        parts.append(struct.pack('<B', 1))
        parts.append(struct.pack('<Q', state.step))
        parts.append(struct.pack('<I', 2 * len(state.m)))
        for name in state.m:
            parts.append(_pack_blob(f'm:{name}', state.m[name]))
            parts.append(_pack_blob(f'v:{name}', state.v[name]))
    try:
        with open(path, 'wb') as f:
            f.write(b''.join(parts))
    except OSError as e:
        msg = e.strerror if e.strerror else str(e)
        raise DataError(f'Failed to write checkpoint: {msg}', filepath=path)
    _debug('Saved %r to %s', model, path)


def load_checkpoint(path):
    """
    Read checkpoint written by :func:`save_checkpoint`

    :return: ``(model, state, info)`` where `state` is an
        :class:`OptimizerState` or `None` and `info` is a :class:`dict` with
        the remaining configuration document entries

    :raise BadMagicError, VersionError, TruncatedError: if the file is
        malformed
    :raise CheckpointError: if the parameters don't match the configuration
    """
    try:
        with open(path, 'rb') as f:
            data = f.read()
    except OSError as e:
        msg = e.strerror if e.strerror else str(e)
        raise DataError(f'Failed to read checkpoint: {msg}', filepath=path)

    reader = _Reader(data, path)
    if data[:4] != CHECKPOINT_MAGIC:
        raise BadMagicError(f'Not a checkpoint: Bad magic bytes {data[:4]!r}', filepath=path)
    reader.read(4)
    version, = reader.unpack('<I')
    if version != CHECKPOINT_VERSION:
        raise VersionError(f'Unsupported version: {version}', filepath=path)

    try:
        document = _config.parse_kv(reader.string(), filepath=path)
        config = ModelConfig.from_dict({
            key[len('model.'):]: value
            for key, value in document.items()
            if key.startswith('model.')
        })
    except ConfigError as e:
        raise CheckpointError(f'Invalid configuration: {e}', filepath=path)
    info = {key: value for key, value in document.items() if not key.startswith('model.')}

    model = build_model(config, zeros=True)
    params = model.named_parameters()
    blob_count, = reader.unpack('<I')
    if blob_count != len(params):
        raise CheckpointError(f'Expected {len(params)} parameter arrays, found {blob_count}', filepath=path)
    for _ in range(blob_count):
        name, array = reader.blob()
        if name not in params:
            raise CheckpointError(f'Unexpected parameter: {name}', filepath=path)
        if array.shape != params[name].shape:
            raise CheckpointError(f'{name}: Shape {array.shape} does not match configuration '
                                  f'{params[name].shape}', filepath=path)
        params[name][...] = array

    state = None
    has_state, = reader.unpack('<B')
    if has_state:
        state = OptimizerState(step=reader.unpack('<Q')[0])
        moment_count, = reader.unpack('<I')
        for _ in range(moment_count):
            key, array = reader.blob()
            kind, _, name = key.partition(':')
            if kind not in ('m', 'v') or name not in params or array.shape != params[name].shape:
                raise CheckpointError(f'Unexpected optimizer entry: {key}', filepath=path)
            getattr(state, kind)[name] = array.copy()
    if not reader.exhausted:
        raise CheckpointError('Trailing data after checkpoint', filepath=path)
    return model, state, info
