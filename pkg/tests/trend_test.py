"""
Training trends on the standard synthetic benchmark

These tests train full-size models for 50 epochs each and take a long time.
Run them with ``pytest -m slow``.
"""

import numpy as np
import pytest

from tempseg import _data, _metrics, _model, _trainer
from tempseg._loss import LossConfig
from tempseg._model import ModelConfig, Variant

pytestmark = pytest.mark.slow

EPOCHS = 50


@pytest.fixture(scope='module')
def benchmark():
    bundle = _data.generate_synthetic(_data.SyntheticSpec())
    assert len(bundle.splits['train']) == 30
    assert len(bundle.splits['test']) == 8
    return bundle


@pytest.fixture(scope='module')
def results(benchmark):
    cache = {}

    def train(variant, lambda_=0.15):
        key = (variant, lambda_)
        if key not in cache:
            config = ModelConfig(variant=variant, input_dim=benchmark.feature_dim,
                                 num_classes=benchmark.num_classes)
            model = _model.build_model(config, _trainer.init_generator(0))
            cfg = _trainer.TrainConfig(epochs=EPOCHS, loss=LossConfig(lambda_=lambda_))
            _trainer.fit(model, benchmark, 'train', cfg)
            pairs = _trainer.predict_split(model, benchmark, 'test')
            cache[key] = (_metrics.evaluate_set(pairs), _metrics.segment_surplus(pairs))
        return cache[key]

    return train


def test_multiple_stages_reduce_over_segmentation(results):
    single, single_surplus = results(Variant.SSTCN)
    multi, multi_surplus = results(Variant.MSTCN)
    assert multi.f1_10 >= single.f1_10 + 10
    assert abs(multi.acc - single.acc) <= 5
    assert abs(multi_surplus) < abs(single_surplus)


def test_smoothing_loss_reduces_over_segmentation(results):
    smoothed, smoothed_surplus = results(Variant.MSTCN, lambda_=0.15)
    plain, plain_surplus = results(Variant.MSTCN, lambda_=0.0)
    assert smoothed.edit >= plain.edit
    assert smoothed.f1_10 >= plain.f1_10
    assert abs(smoothed.acc - plain.acc) <= 2
    assert smoothed_surplus < plain_surplus


def test_shared_refinement_matches_unshared(results):
    shared, _ = results(Variant.MSTCNPP_SHARED)
    unshared, _ = results(Variant.MSTCNPP)
    for metric in ('acc', 'edit', 'f1_10', 'f1_25', 'f1_50'):
        assert abs(getattr(shared, metric) - getattr(unshared, metric)) <= 5, metric


def test_copied_shared_parameters_give_identical_outputs(benchmark):
    config = ModelConfig(variant=Variant.MSTCNPP_SHARED, input_dim=benchmark.feature_dim,
                         num_classes=benchmark.num_classes)
    shared = _model.build_model(config, _trainer.init_generator(1))
    unshared = _model.copy_shared_into_unshared(shared)
    for sample in benchmark.split('test'):
        a = _model.forward(shared, sample.features)
        b = _model.forward(unshared, sample.features)
        for probs_a, probs_b in zip(a.probs, b.probs):
            assert np.array_equal(probs_a, probs_b)
