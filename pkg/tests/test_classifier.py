"""The fixed classifier under explanation."""

import numpy as np
import pytest

from cfgen.classifier import (ClassifierConfig, ClassifierModel, class_scores,
                              predict_class, train_classifier)
from cfgen.errors import ConfigurationError
from cfgen.nn import MlpSpec, Tensor


def test_linearly_separable_toy():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(400, 2))
    y = (X[:, 0] + X[:, 1] > 0).astype(np.int64)
    model = train_classifier(X[:300], y[:300], X[300:], y[300:],
                             ClassifierConfig(epochs=100, seed=0))
    acc = float(np.mean(predict_class(model, X[300:]) == y[300:]))
    assert acc >= 0.95


def zero_model(d=2, k=2):
    spec = MlpSpec((d, 4, k), ("relu", "identity"))
    params = [Tensor(np.zeros((d, 4))), Tensor(np.zeros(4)),
              Tensor(np.zeros((4, k))), Tensor(np.zeros(k))]
    return ClassifierModel(spec=spec, params=params, schema=None, n_classes=k)


def test_zero_logits_give_uniform_scores():
    model = zero_model()
    s = class_scores(model, np.array([0.3, -0.7]))
    np.testing.assert_allclose(s, [0.5, 0.5], atol=1e-15)


def test_scores_sum_to_one():
    rng = np.random.default_rng(1)
    model = train_classifier(rng.normal(size=(100, 3)),
                             rng.integers(0, 2, size=100).astype(np.int64),
                             rng.normal(size=(20, 3)),
                             rng.integers(0, 2, size=20).astype(np.int64),
                             ClassifierConfig(epochs=2, seed=0))
    s = class_scores(model, rng.normal(size=(1000, 3)))
    np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-9)
    assert (s > 0).all()


def test_tie_breaks_to_lowest_index():
    model = zero_model()
    assert predict_class(model, np.array([1.0, 2.0])) == 0


def test_training_deterministic(bn_setup):
    s = bn_setup
    cfg = ClassifierConfig(epochs=3, seed=9)
    a = train_classifier(s["X"]["train"], s["y"]["train"], s["X"]["val"],
                         s["y"]["val"], cfg)
    b = train_classifier(s["X"]["train"], s["y"]["train"], s["X"]["val"],
                         s["y"]["val"], cfg)
    assert a.hash() == b.hash()


def test_single_class_rejected():
    X = np.zeros((20, 2))
    y = np.zeros(20, dtype=np.int64)
    with pytest.raises(ConfigurationError):
        train_classifier(X, y, X, y, ClassifierConfig(epochs=1))


def test_validation_accuracy_logged(bn_classifier):
    assert len(bn_classifier.history) == 40
    assert all(0.0 <= a <= 1.0 for a in bn_classifier.history)
