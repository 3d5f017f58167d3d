import dataclasses
import os
import struct
import typing

import numpy as np

from . import _config, _debug
from ._errors import (BadMagicError, ConfigError, DataError, DomainError,
                      TruncatedError, VersionError)

FEATURES_MAGIC = b'MSTF'
FEATURES_VERSION = 1
_FEATURES_HEADER = struct.Struct('<4sIIQ')

FEATURES_DIRECTORY = 'features'
GROUND_TRUTH_DIRECTORY = 'groundTruth'
SPLITS_DIRECTORY = 'splits'
MAPPING_FILENAME = 'mapping.txt'
MANIFEST_FILENAME = 'manifest.txt'
FEATURES_EXTENSION = '.mstf'
SPLIT_EXTENSION = '.bundle'


@dataclasses.dataclass
class VideoSample:
    """Features (dimensions x frames) and one class index per frame"""

    id: str
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[1] != self.labels.shape[0]:
            raise DataError(f'{self.id}: {self.features.shape[1] if self.features.ndim == 2 else 0} '
                            f'feature frames but {self.labels.shape[0]} labels')

    @property
    def num_frames(self):
        return self.labels.shape[0]


@dataclasses.dataclass
class DatasetBundle:
    """
    Class names, samples and named splits (lists of sample ids)

    `manifest` holds generator settings for synthetic bundles and is empty
    otherwise.
    """

    classes: typing.List[str]
    samples: typing.List[VideoSample]
    splits: typing.Dict[str, typing.List[str]] = dataclasses.field(default_factory=dict)
    manifest: typing.Dict[str, object] = dataclasses.field(default_factory=dict)

    def __post_init__(self):
        ids = set()
        for sample in self.samples:
            if sample.id in ids:
                raise DataError(f'Duplicate video id: {sample.id}')
            ids.add(sample.id)
            if sample.labels.size and (sample.labels.min() < 0 or sample.labels.max() >= len(self.classes)):
                raise DataError(f'{sample.id}: Label index out of range for {len(self.classes)} classes')
        for name, split_ids in self.splits.items():
            for id in split_ids:
                if id not in ids:
                    raise DataError(f'Split {name}: Unknown video id: {id}')

    @property
    def num_classes(self):
        return len(self.classes)

    @property
    def feature_dim(self):
        return self.samples[0].features.shape[0] if self.samples else 0

    def sample(self, id):
        for sample in self.samples:
            if sample.id == id:
                return sample
        raise DataError(f'Unknown video id: {id}')

    def split(self, name):
        """List of :class:`VideoSample` in split `name`"""
        try:
            ids = self.splits[name]
        except KeyError:
            raise DataError(f'Unknown split: {name}')
        return [self.sample(id) for id in ids]

    def class_indexes(self, names):
        """Map class `names` to indexes"""
        indexes = []
        for name in names:
            try:
                indexes.append(self.classes.index(name))
            except ValueError:
                raise DataError(f'Unknown class: {name}')
        return indexes


def save_features(path, tensor):
    """
    Write `tensor` as little-endian float32, channel-major, behind a header of
    magic bytes, format version, channels and frames
    """
    tensor = np.asarray(tensor)
    if tensor.ndim != 2:
        raise DataError(f'Features must have 2 dimensions, not {tensor.ndim}', filepath=path)
    header = _FEATURES_HEADER.pack(FEATURES_MAGIC, FEATURES_VERSION, tensor.shape[0], tensor.shape[1])
    payload = np.ascontiguousarray(tensor, dtype='<f4').tobytes()
    try:
        with open(path, 'wb') as f:
            f.write(header)
            f.write(payload)
    except OSError as e:
        msg = e.strerror if e.strerror else str(e)
        raise DataError(f'Failed to write features: {msg}', filepath=path)


def load_features(path):
    """
    Read tensor written by :func:`save_features`

    :raise BadMagicError: if the file doesn't start with the magic bytes
    :raise VersionError: if the format version is unsupported
    :raise TruncatedError: if the file ends early or has trailing data
    :raise DataError: if the file can't be read
    """
    try:
        with open(path, 'rb') as f:
            data = f.read()
    except OSError as e:
        msg = e.strerror if e.strerror else str(e)
        raise DataError(f'Failed to read features: {msg}', filepath=path)

    if data[:4] != FEATURES_MAGIC:
        raise BadMagicError(f'Not a feature file: Bad magic bytes {data[:4]!r}', filepath=path)
    if len(data) < _FEATURES_HEADER.size:
        raise TruncatedError('Truncated header', filepath=path)
    _, version, channels, frames = _FEATURES_HEADER.unpack_from(data)
    if version != FEATURES_VERSION:
        raise VersionError(f'Unsupported version: {version}', filepath=path)
    expected = channels * frames * 4
    payload = data[_FEATURES_HEADER.size:]
    if len(payload) != expected:
        raise TruncatedError(f'Expected {expected} payload bytes, found {len(payload)}', filepath=path)
    return np.frombuffer(payload, dtype='<f4').reshape(channels, frames).astype(np.float32)


def _read_lines(path):
    try:
        with open(path, 'r', encoding='utf-8') as f:
            return f.read().splitlines()
    except OSError as e:
        msg = e.strerror if e.strerror else str(e)
        raise DataError(f'Failed to read: {msg}', filepath=path)


def _write_text(path, text):
    try:
        with open(path, 'w', encoding='utf-8') as f:
            f.write(text)
    except OSError as e:
        msg = e.strerror if e.strerror else str(e)
        raise DataError(f'Failed to write: {msg}', filepath=path)


def load_mapping(path):
    """
    Read ``<index> <name>`` lines with contiguous indexes starting at 0

    :return: list of class names
    """
    names = {}
    for line_number, line in enumerate(_read_lines(path), start=1):
        if not line.strip():
            continue
        index, _, name = line.strip().partition(' ')
        name = name.strip()
        try:
            index = int(index)
        except ValueError:
            raise DataError(f'Line {line_number}: Invalid class index: {index}', filepath=path)
        if not name:
            raise DataError(f'Line {line_number}: Missing class name', filepath=path)
        if index in names:
            raise DataError(f'Line {line_number}: Duplicate class index: {index}', filepath=path)
        names[index] = name
    if sorted(names) != list(range(len(names))):
        raise DataError('Class indexes are not contiguous from 0', filepath=path)
    if len(set(names.values())) != len(names):
        raise DataError('Duplicate class names', filepath=path)
    return [names[i] for i in range(len(names))]


def _load_labels(path, classes, id):
    indexes = {name: i for i, name in enumerate(classes)}
    labels = []
    for line_number, line in enumerate(_read_lines(path), start=1):
        name = line.strip()
        try:
            labels.append(indexes[name])
        except KeyError:
            raise DataError(f'{id}: Line {line_number}: Unknown class: {name}', filepath=path)
    return np.array(labels, dtype=np.int64)


def load_dataset(root, split=None):
    """
    Read dataset from directory `root`

    The directory contains ``mapping.txt``, ``features/<id>.mstf``,
    ``groundTruth/<id>.txt`` and ``splits/<split>.bundle``.

    :param split: Name of the split to load, sequence of split names or
        `None` to load all videos in ``features/``

    :return: :class:`DatasetBundle`
    :raise DataError: if any file is missing or malformed or if the number of
        frames in features and labels differ
    """
    root = str(root)
    classes = load_mapping(os.path.join(root, MAPPING_FILENAME))

    if split is None:
        features_dir = os.path.join(root, FEATURES_DIRECTORY)
        try:
            filenames = sorted(os.listdir(features_dir))
        except OSError as e:
            msg = e.strerror if e.strerror else str(e)
            raise DataError(f'Failed to read directory: {msg}', filepath=features_dir)
        ids = [f[:-len(FEATURES_EXTENSION)] for f in filenames if f.endswith(FEATURES_EXTENSION)]
        splits = {}
    else:
        splits = {}
        for name in ([split] if isinstance(split, str) else split):
            split_path = os.path.join(root, SPLITS_DIRECTORY, f'{name}{SPLIT_EXTENSION}')
            splits[name] = [line.strip() for line in _read_lines(split_path) if line.strip()]
        ids = list(dict.fromkeys(id for split_ids in splits.values() for id in split_ids))

    samples = []
    for id in ids:
        _debug('Loading %s', id)
        features = load_features(os.path.join(root, FEATURES_DIRECTORY, f'{id}{FEATURES_EXTENSION}'))
        labels_path = os.path.join(root, GROUND_TRUTH_DIRECTORY, f'{id}.txt')
        labels = _load_labels(labels_path, classes, id)
        if labels.shape[0] != features.shape[1]:
            raise DataError(f'{id}: {features.shape[1]} feature frames but {labels.shape[0]} labels',
                            filepath=labels_path)
        samples.append(VideoSample(id=id, features=features, labels=labels))

    manifest = {}
    manifest_path = os.path.join(root, MANIFEST_FILENAME)
    if os.path.exists(manifest_path):
        try:
            manifest = _config.parse_kv('\n'.join(_read_lines(manifest_path)), filepath=manifest_path)
        except ConfigError as e:
            raise DataError(str(e))

    return DatasetBundle(classes=classes, samples=samples, splits=splits, manifest=manifest)


def save_dataset(root, bundle):
    """Write `bundle` to directory `root` in the layout :func:`load_dataset` reads"""
    root = str(root)
    for directory in (FEATURES_DIRECTORY, GROUND_TRUTH_DIRECTORY, SPLITS_DIRECTORY):
        path = os.path.join(root, directory)
        try:
            os.makedirs(path, exist_ok=True)
        except OSError as e:
            msg = e.strerror if e.strerror else str(e)
            raise DataError(f'Failed to create directory: {msg}', filepath=path)

    _write_text(os.path.join(root, MAPPING_FILENAME),
                ''.join(f'{i} {name}\n' for i, name in enumerate(bundle.classes)))
    for sample in bundle.samples:
        save_features(os.path.join(root, FEATURES_DIRECTORY, f'{sample.id}{FEATURES_EXTENSION}'),
                      sample.features)
        _write_text(os.path.join(root, GROUND_TRUTH_DIRECTORY, f'{sample.id}.txt'),
                    ''.join(f'{bundle.classes[label]}\n' for label in sample.labels))
    for name, ids in bundle.splits.items():
        _write_text(os.path.join(root, SPLITS_DIRECTORY, f'{name}{SPLIT_EXTENSION}'),
                    ''.join(f'{id}\n' for id in ids))
    if bundle.manifest:
        _write_text(os.path.join(root, MANIFEST_FILENAME), _config.format_kv(bundle.manifest))


def temporal_downsample(sample, factor):
    """
    Keep frames ``0, factor, 2 * factor, ...`` of features and labels

    :raise DomainError: if `factor` is smaller than 1
    """
    if factor < 1:
        raise DomainError(f'Downsampling factor must be at least 1: {factor}')
    if factor == 1:
        return sample
    return VideoSample(
        id=sample.id,
        features=np.ascontiguousarray(sample.features[:, ::factor]),
        labels=sample.labels[::factor].copy(),
    )


def downsample_bundle(bundle, factor):
    """Return copy of `bundle` with :func:`temporal_downsample` applied to every sample"""
    return dataclasses.replace(
        bundle,
        samples=[temporal_downsample(sample, factor) for sample in bundle.samples],
        splits={name: list(ids) for name, ids in bundle.splits.items()},
        manifest=dict(bundle.manifest),
    )


@dataclasses.dataclass
class SyntheticSpec:
    """
    Settings of :func:`generate_synthetic`

    Every video is a sequence of segments. Segment classes follow a uniform
    transition model that optionally forbids repeating the previous class.
    Segment lengths are uniform in ``[min_segment, max_segment]``. The number
    of segments per video is Poisson distributed around `mean_segments`
    (at least 1). Features are a fixed prototype vector per class plus
    Gaussian noise with standard deviation `noise`. Prototypes have length
    `prototype_norm` and are orthogonal if there are enough dimensions. At
    the default length and noise, single frames are ambiguous and classifying
    a frame needs its temporal context.
    """

    num_videos: int = 38
    num_classes: int = 8
    feature_dim: int = 32
    min_segment: int = 30
    max_segment: int = 120
    mean_segments: float = 13.0
    noise: float = 0.6
    prototype_norm: float = 0.5
    exclude_self_transitions: bool = True
    test_fraction: float = 0.2
    seed: int = 1

    def __post_init__(self):
        if self.num_videos < 1:
            raise ConfigError(f'Number of videos must be at least 1: {self.num_videos}')
        if self.num_classes < 2:
            raise ConfigError(f'Number of classes must be at least 2: {self.num_classes}')
        if self.feature_dim < 1:
            raise ConfigError(f'Feature dimension must be at least 1: {self.feature_dim}')
        if not 1 <= self.min_segment <= self.max_segment:
            raise ConfigError(f'Invalid segment length range: {self.min_segment} - {self.max_segment}')
        if not self.mean_segments > 0:
            raise ConfigError(f'Mean number of segments must be positive: {self.mean_segments}')
        if not self.noise >= 0:
            raise ConfigError(f'Noise must not be negative: {self.noise}')
        if not self.prototype_norm > 0:
            raise ConfigError(f'Prototype norm must be positive: {self.prototype_norm}')
        if not 0 <= self.test_fraction < 1:
            raise ConfigError(f'Test fraction must be in [0, 1): {self.test_fraction}')

    def to_kv(self):
        return {f'spec.{key}': value for key, value in dataclasses.asdict(self).items()}


def _prototypes(rng, num_classes, feature_dim, norm):
    # Orthogonal rows if there are enough dimensions, random directions otherwise
    gaussian = rng.standard_normal((feature_dim, num_classes))
    if num_classes <= feature_dim:
        q, _ = np.linalg.qr(gaussian)
        return norm * q.T
    return norm * (gaussian / np.linalg.norm(gaussian, axis=0, keepdims=True)).T


def nearest_prototype_accuracy(bundle, prototypes):
    """Percentage of frames whose nearest class prototype is the true class"""
    correct = frames = 0
    for sample in bundle.samples:
        distances = ((sample.features.T[:, None, :] - prototypes[None, :, :]) ** 2).sum(axis=2)
        correct += int(np.sum(distances.argmin(axis=1) == sample.labels))
        frames += sample.num_frames
    return 100 * correct / frames


def generate_synthetic(spec):
    """
    Deterministically generate a :class:`DatasetBundle` from `spec`

    The bundle has ``train`` and ``test`` splits and a manifest with the
    settings and the frame accuracy of a nearest-prototype classifier.
    """
    rng = np.random.default_rng(spec.seed)
    prototypes = _prototypes(rng, spec.num_classes, spec.feature_dim, spec.prototype_norm)
    classes = [f'action{c}' for c in range(spec.num_classes)]
    width = len(str(spec.num_videos - 1))
    samples = []
    for v in range(spec.num_videos):
        num_segments = max(1, int(rng.poisson(spec.mean_segments)))
        labels = []
        previous = None
        for _ in range(num_segments):
            if spec.exclude_self_transitions and previous is not None:
                label = int(rng.integers(spec.num_classes - 1))
                if label >= previous:
                    label += 1
            else:
                label = int(rng.integers(spec.num_classes))
            length = int(rng.integers(spec.min_segment, spec.max_segment + 1))
            labels.extend([label] * length)
            previous = label
        labels = np.array(labels, dtype=np.int64)
        noise = rng.standard_normal((spec.feature_dim, labels.size)) * spec.noise
        features = (prototypes[labels].T + noise).astype(np.float32)
        samples.append(VideoSample(id=f'video{v:0{width}d}', features=features, labels=labels))

    num_test = int(round(spec.num_videos * spec.test_fraction))
    ids = [sample.id for sample in samples]
    splits = {'train': ids[:len(ids) - num_test], 'test': ids[len(ids) - num_test:]}
    bundle = DatasetBundle(classes=classes, samples=samples, splits=splits)
    bundle.manifest = dict(spec.to_kv())
    bundle.manifest['bayes_proxy_accuracy'] = nearest_prototype_accuracy(bundle, prototypes)
    _debug('Generated %d videos, nearest-prototype accuracy %.2f',
           len(samples), bundle.manifest['bayes_proxy_accuracy'])
    return bundle
