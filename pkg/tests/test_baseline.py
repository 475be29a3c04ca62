"""Per-instance gradient-descent counterfactual search."""

import numpy as np
import pytest

from cfgen.baseline import InstanceOptConfig, OptTrace, _project_simplex, optimize_cf
from cfgen.classifier import ClassifierModel, class_scores
from cfgen.errors import ConfigurationError, NumericError
from cfgen.nn import MlpSpec, Tensor


def logistic_1d(w=6.0, b=-3.0):
    """One feature, two classes: logit gap = w*x + b, boundary at x = -b/w."""
    spec = MlpSpec((1, 1, 2), ("identity", "identity"))
    params = [Tensor(np.array([[1.0]])), Tensor(np.array([0.0])),
              Tensor(np.array([[0.0, w]])), Tensor(np.array([0.0, b]))]
    return ClassifierModel(spec=spec, params=params, schema=None, n_classes=2)


def test_short_circuit_when_already_target():
    model = logistic_1d()
    x = np.array([0.9])  # logit gap positive -> predicted 1
    cf, trace = optimize_cf(model, x, 1, InstanceOptConfig())
    np.testing.assert_array_equal(cf, x)
    assert trace.iterations == 0 and trace.valid


def test_crosses_known_boundary():
    model = logistic_1d(w=6.0, b=-3.0)   # boundary at x = 0.5
    x = np.array([0.2])
    cf, trace = optimize_cf(model, x, 1,
                            InstanceOptConfig(lr=0.05, max_iterations=200))
    assert trace.valid
    assert cf[0] > 0.5 - 1e-9
    assert trace.iterations <= 200


def test_deterministic():
    model = logistic_1d()
    x = np.array([0.1])
    cfg = InstanceOptConfig(lr=0.03, max_iterations=50)
    a, ta = optimize_cf(model, x, 1, cfg)
    b, tb = optimize_cf(model, x, 1, cfg)
    assert a.tobytes() == b.tobytes()
    assert ta.losses == tb.losses


def test_classification_loss_monotone_without_distance():
    model = logistic_1d()
    x = np.array([0.05])
    cfg = InstanceOptConfig(lr=1e-3, max_iterations=300, distance_weight=0.0,
                            tolerance=0.0)
    _, trace = optimize_cf(model, x, 1, cfg)
    assert all(b <= a + 1e-12 for a, b in zip(trace.losses, trace.losses[1:]))


def test_best_valid_iterate_has_smallest_distance():
    model = logistic_1d()
    x = np.array([0.2])
    cfg = InstanceOptConfig(lr=0.05, max_iterations=200)
    cf, trace = optimize_cf(model, x, 1, cfg)
    assert trace.valid and trace.best_iteration is not None
    # running further from the best iterate can only increase the distance
    assert abs(cf[0] - x[0]) <= 0.6


def test_unreachable_target_flagged_invalid():
    # two steps at a tiny rate cannot cross the boundary from far away
    model = logistic_1d(w=6.0, b=-3.0)
    cf, trace = optimize_cf(model, np.array([0.0]), 1,
                            InstanceOptConfig(lr=1e-6, max_iterations=2))
    assert not trace.valid
    assert trace.best_iteration is None


def test_non_finite_iterate_raises():
    model = logistic_1d()
    with pytest.raises(NumericError, match="iteration"):
        optimize_cf(model, np.array([0.2]), 1,
                    InstanceOptConfig(lr=float("inf"), max_iterations=5))


def test_simplex_projection_properties():
    rng = np.random.default_rng(0)
    for _ in range(50):
        v = rng.normal(size=5)
        p = _project_simplex(v)
        assert abs(p.sum() - 1.0) < 1e-12
        assert (p >= 0).all()
    already = np.array([0.2, 0.3, 0.5])
    np.testing.assert_allclose(_project_simplex(already), already, atol=1e-12)


def test_categorical_blocks_stay_on_simplex(bn_setup, bn_classifier):
    import pandas as pd
    from cfgen.data import encode, fit_schema
    df = pd.DataFrame({"v": [0.0, 1.0, 2.0, 3.0],
                       "c": ["a", "b", "a", "b"], "y": [0, 1, 0, 1]})
    schema = fit_schema(df, {"v": "continuous", "c": "categorical"}, target="y")
    X = encode(schema, df)
    from cfgen.classifier import ClassifierConfig, train_classifier
    y = df.y.to_numpy(dtype=np.int64)
    model = train_classifier(X, y, X, y, ClassifierConfig(epochs=5, seed=0), schema)
    cf, _ = optimize_cf(model, X[0], 1,
                        InstanceOptConfig(lr=0.1, max_iterations=20), schema)
    block = schema.block_slices()["c"]
    assert abs(cf[block].sum() - 1.0) < 1e-9
    assert (cf[block] >= 0).all()
    assert 0.0 <= cf[0] <= 1.0


def test_config_validation():
    with pytest.raises(ConfigurationError):
        InstanceOptConfig(max_iterations=0)
    with pytest.raises(ConfigurationError):
        InstanceOptConfig(distance="causal")
