"""Causal proximity and constraint penalties."""

import numpy as np
import pandas as pd
import pytest

from cfgen.data import encode, fit_schema
from cfgen.errors import ConfigurationError, DegenerateFitError, StateError
from cfgen.feasibility import (CausalProximityConfig, MonotonicConstraint,
                               UnaryConstraint, causal_config_from_scm,
                               causal_dist_builder, constraint_penalty_builder,
                               dist_causal_node, dist_causal_total,
                               dist_causal_total_relative, fit_monotonic_linear,
                               monotonic_penalty, unary_hinge)
from cfgen.nn import Tape
from cfgen.scm import simple_bn_scm

from helpers import finite_difference, max_rel_error


@pytest.fixture(scope="module")
def bn_ctx():
    scm = simple_bn_scm()
    df = scm.sample(400, seed=7).to_frame()
    schema = fit_schema(df, {"x1": "continuous", "x2": "continuous",
                             "x3": "continuous"}, target="y")
    config = causal_config_from_scm(scm, schema, weight=55.0)
    return scm, df, schema, config


def enc_row(schema, x1, x2, x3):
    return encode(schema, pd.DataFrame({"x1": [x1], "x2": [x2], "x3": [x3],
                                        "y": [0]}), mode="clamp")[0]


def test_node_residual_zero_on_mechanism(bn_ctx):
    scm, _, schema, config = bn_ctx
    cf = enc_row(schema, 50.0, 50.0, 13.0)
    assert dist_causal_node("x3", cf, config) == pytest.approx(0.0, abs=1e-12)


def test_node_residual_simple_bn_example(bn_ctx):
    scm, _, schema, config = bn_ctx
    cf = enc_row(schema, 50.0, 50.0, 14.0)
    width = schema.column("x3").max - schema.column("x3").min
    # one raw unit of residual, scaled by the feature width
    assert dist_causal_node("x3", cf, config) == pytest.approx(1.0 / width, abs=1e-9)


def test_node_residual_ignores_original_value(bn_ctx):
    scm, _, schema, config = bn_ctx
    cf = enc_row(schema, 50.0, 50.0, 14.0)
    assert dist_causal_node("x3", cf, config) == dist_causal_node("x3", cf, config)
    # the function takes no original row at all: only CF values enter
    import inspect
    assert "x" not in inspect.signature(dist_causal_node).parameters


def test_total_at_identity(bn_ctx):
    scm, df, schema, config = bn_ctx
    X = encode(schema, df.head(20), mode="clamp")
    total = dist_causal_total(X, X, config)
    endo = np.array([dist_causal_node("x3", X[i], config) for i in range(20)])
    np.testing.assert_allclose(total, 55.0 * endo, atol=1e-12)


def test_empty_endogenous_set_is_plain_l1(bn_ctx):
    scm, df, schema, _ = bn_ctx
    config = CausalProximityConfig(scm=scm, schema=schema, endogenous=(), weight=1.0)
    rng = np.random.default_rng(0)
    X = rng.uniform(size=(50, 3))
    Xcf = rng.uniform(size=(50, 3))
    got = dist_causal_total(X, Xcf, config)
    want = np.abs(Xcf - X).sum(axis=1)
    assert got.tobytes() == want.tobytes()


def test_relative_change_form_identical(bn_ctx):
    scm, _, schema, config = bn_ctx
    rng = np.random.default_rng(1)
    X = rng.uniform(size=(100, 3))
    Xcf = rng.uniform(size=(100, 3))
    a = dist_causal_total(X, Xcf, config)
    b = dist_causal_total_relative(X, Xcf, config)
    assert np.abs(a - b).max() < 1e-9


def test_dist_builder_matches_plain_function(bn_ctx):
    scm, df, schema, config = bn_ctx
    rng = np.random.default_rng(2)
    X = rng.uniform(size=(10, 3))
    Xcf = rng.uniform(size=(10, 3))
    tape = Tape()
    rows = causal_dist_builder(config)(tape, tape.const(X), tape.const(Xcf))
    np.testing.assert_allclose(rows.value, dist_causal_total(X, Xcf, config),
                               atol=1e-12)


def test_unary_hinge_continuous():
    c = UnaryConstraint("Age", "non-decrease")
    assert unary_hinge({"Age": 41}, {"Age": 39}, c) == 2.0
    assert unary_hinge({"Age": 41}, {"Age": 45}, c) == 0.0
    c2 = UnaryConstraint("Age", "non-increase")
    assert unary_hinge({"Age": 41}, {"Age": 45}, c2) == 4.0


def test_unary_hinge_rank_scored_categorical():
    df = pd.DataFrame({"Education": ["Bachelors", "Masters", "HS-Grad"],
                       "y": [0, 1, 0]})
    schema = fit_schema(df, {"Education": "categorical"}, target="y",
                        rank_vectors={"Education": "education"})
    c = UnaryConstraint("Education", "non-decrease")
    assert unary_hinge({"Education": "Masters"}, {"Education": "Bachelors"},
                       c, schema) == 1.0
    assert unary_hinge({"Education": "Bachelors"}, {"Education": "Masters"},
                       c, schema) == 0.0


def test_penalties_nonnegative_and_zero_iff_satisfied():
    c = UnaryConstraint("v", "non-decrease")
    rng = np.random.default_rng(3)
    for _ in range(100):
        a, b = rng.normal(size=2)
        pen = unary_hinge({"v": a}, {"v": b}, c)
        assert pen >= 0.0
        assert (pen == 0.0) == (b >= a)


def test_fit_exact_line():
    rng = np.random.default_rng(4)
    x = rng.uniform(0, 10, size=50)
    df = pd.DataFrame({"c": x, "e": 2.0 * x + 1.0})
    con = fit_monotonic_linear(df, "c", "e", "increasing")
    assert con.slope == pytest.approx(2.0, abs=1e-6)
    assert con.intercept == pytest.approx(1.0, abs=1e-6)


def test_fit_projects_wrong_sign():
    rng = np.random.default_rng(5)
    x = rng.uniform(0, 10, size=50)
    df = pd.DataFrame({"c": x, "e": -3.0 * x + rng.normal(0, 0.1, 50)})
    con = fit_monotonic_linear(df, "c", "e", "increasing")
    assert con.slope >= -1e-6
    dec = fit_monotonic_linear(df, "c", "e", "decreasing")
    assert dec.slope == pytest.approx(-3.0, abs=0.05)


def test_fit_order_invariant():
    rng = np.random.default_rng(6)
    x = rng.uniform(0, 10, size=30)
    y = 0.5 * x + rng.normal(0, 0.2, 30)
    df = pd.DataFrame({"c": x, "e": y})
    shuffled = df.sample(frac=1.0, random_state=1).reset_index(drop=True)
    a = fit_monotonic_linear(df, "c", "e")
    b = fit_monotonic_linear(shuffled, "c", "e")
    assert a.slope == pytest.approx(b.slope, abs=1e-12)


def test_fit_constant_cause_degenerate():
    df = pd.DataFrame({"c": [2.0, 2.0, 2.0], "e": [1.0, 2.0, 3.0]})
    with pytest.raises(DegenerateFitError):
        fit_monotonic_linear(df, "c", "e")


def test_monotonic_penalty_on_line(bn_ctx):
    _, _, schema, _ = bn_ctx
    c = MonotonicConstraint("x1", "x3", "increasing", intercept=10.0, slope=0.06)
    cf = {"x1": 50.0, "x3": 13.0}
    assert monotonic_penalty({}, cf, c, schema) == pytest.approx(0.0, abs=1e-12)


def test_monotonic_penalty_one_unit_above(bn_ctx):
    _, _, schema, _ = bn_ctx
    c = MonotonicConstraint("x1", "x3", "increasing", intercept=10.0, slope=0.06)
    width = schema.column("x3").max - schema.column("x3").min
    cf = {"x1": 50.0, "x3": 14.0}
    assert monotonic_penalty({}, cf, c, schema) == pytest.approx(1.0 / width, abs=1e-9)


def test_monotonic_penalty_requires_fit(bn_ctx):
    _, _, schema, _ = bn_ctx
    with pytest.raises(StateError):
        monotonic_penalty({}, {"x1": 1.0, "x3": 1.0},
                          MonotonicConstraint("x1", "x3", "increasing"), schema)


def test_penalty_builder_gradient_matches_fd(bn_ctx):
    _, _, schema, _ = bn_ctx
    c = MonotonicConstraint("x1", "x3", "increasing", intercept=10.0, slope=0.06)
    builder = constraint_penalty_builder([c], 1.0, schema)
    x0 = np.array([[0.4, 0.6, 0.3]])

    def f(flat):
        tape = Tape()
        cf = tape.const(flat.reshape(1, 3))
        return float(builder(tape, tape.const(x0), cf).value)

    tape = Tape()
    cf = tape.leaf(x0.copy())
    pen = builder(tape, tape.const(x0), cf)
    tape.backward(pen)
    fd = finite_difference(f, x0.reshape(-1))
    assert max_rel_error(tape.grad(cf).reshape(-1), fd) < 1e-4


def test_zero_weight_penalty_equals_base_loss(bn_setup, bn_classifier):
    from cfgen.vae import VaeTrainConfig, base_gen_cf_loss, build_cf_vae, build_loss, push_params
    from cfgen.nn import Tape
    schema = bn_setup["schema"]
    vae = build_cf_vae(3, schema, seed=0)
    X = bn_setup["X"]["train"][:16]
    y = np.ones(16, dtype=int)
    cfg = VaeTrainConfig(150.0, 0.15, seed=0)
    c = MonotonicConstraint("x1", "x3", "increasing", intercept=10.0, slope=0.06)
    builder = constraint_penalty_builder([c], 0.0, schema)
    t1 = Tape()
    base = build_loss(t1, vae, push_params(t1, vae), bn_classifier, X, y, cfg,
                      np.random.default_rng(0))
    t2 = Tape()
    wpen = build_loss(t2, vae, push_params(t2, vae), bn_classifier, X, y, cfg,
                      np.random.default_rng(0), penalty_builder=builder)
    assert float(base.total.value) == float(wpen.total.value)


def test_config_invariants(bn_ctx):
    scm, _, schema, _ = bn_ctx
    with pytest.raises(ConfigurationError):
        CausalProximityConfig(scm=scm, schema=schema, endogenous=("nope",), weight=1.0)
    with pytest.raises(ConfigurationError):
        CausalProximityConfig(scm=scm, schema=schema, endogenous=("x1",), weight=1.0)
    cfg = causal_config_from_scm(scm, schema, 2.0)
    assert set(cfg.exogenous) == {"x1", "x2"}
    assert cfg.endogenous == ("x3",)
