"""Autodiff core, layers, optimizers, checkpoints."""

import numpy as np
import pytest

from cfgen.errors import DimensionError, NumericError, ParseError
from cfgen.nn import (MlpSpec, Tape, Tensor, adam, backward, forward,
                      init_params, load_mlp, maximum, mlp_eval, params_hash,
                      save_mlp, sgd, step)
from cfgen.nn.layers import forward_var

from helpers import finite_difference, flatten_params, max_rel_error, unflatten_like


def test_identity_layer_passthrough():
    spec = MlpSpec((3, 3), ("identity",))
    params = [Tensor(np.eye(3)), Tensor(np.zeros(3))]
    x = Tensor(np.array([[0.3, -1.2, 4.0]]))
    out, _ = forward(spec, params, x)
    np.testing.assert_array_equal(out.data, x.data)


def test_relu_layer():
    spec = MlpSpec((2, 2), ("relu",))
    params = [Tensor(np.eye(2)), Tensor(np.zeros(2))]
    out, _ = forward(spec, params, Tensor(np.array([-1.0, 2.0])))
    np.testing.assert_array_equal(out.data, [[0.0, 2.0]])


def test_forward_deterministic_across_calls():
    rng = np.random.default_rng(5)
    spec = MlpSpec((3, 4, 2), ("relu", "sigmoid"))
    params = init_params(spec, rng)
    x = Tensor(rng.normal(size=(6, 3)))
    out1, _ = forward(spec, params, x, training=False)
    out2, _ = forward(spec, params, x, training=False)
    assert out1.data.tobytes() == out2.data.tobytes()
    # the tape-free path is bit-identical too
    assert mlp_eval(spec, params, x.data).tobytes() == out1.data.tobytes()


def test_backward_linear_gradient_is_input():
    x = np.array([[2.0, -3.0, 0.5]])
    tape = Tape()
    w = tape.leaf(np.zeros(3))
    loss = (tape.const(x[0]) * w).sum()
    tape.backward(loss)
    np.testing.assert_array_equal(tape.grad(w), x[0])


def test_backward_sigmoid_square_at_zero():
    tape = Tape()
    w = tape.leaf(np.array(0.0))
    s = w.sigmoid()
    loss = s * s
    tape.backward(loss)
    # d/dw sigmoid(w)^2 = 2 s^2 (1 - s) = 2 * 0.5 * 0.5 * 0.5
    assert abs(float(tape.grad(w)) - 0.25) < 1e-12


def test_gradients_match_finite_differences_on_random_nets():
    worst = 0.0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        widths = tuple(int(w) for w in rng.integers(2, 8, size=3))
        spec = MlpSpec(widths, ("relu", "sigmoid"))
        params = init_params(spec, rng)
        x = rng.normal(size=(4, widths[0]))
        target = rng.normal(size=(4, widths[-1]))

        def loss_of(flat):
            ps = unflatten_like(flat, params)
            h = x
            h = np.maximum(h @ ps[0] + ps[1], 0.0)
            z = h @ ps[2] + ps[3]
            s = np.where(z >= 0, 1 / (1 + np.exp(-z)), np.exp(z) / (1 + np.exp(z)))
            return ((s - target) ** 2).sum()

        tape = Tape()
        pvars = [tape.leaf(p.data) for p in params]
        h = forward_var(tape, spec, pvars, tape.const(x))
        loss = (h - tape.const(target)).square().sum()
        tape.backward(loss)
        grads = np.concatenate([tape.grad(v).ravel() for v in pvars])
        fd = finite_difference(loss_of, flatten_params(params))
        worst = max(worst, max_rel_error(grads, fd))
    assert worst < 1e-4


def test_tape_parent_indices_precede_children():
    tape = Tape()
    a = tape.leaf(np.ones(3))
    b = (a * 2.0 + 1.0).relu().sum()
    for i, node in enumerate(tape.nodes):
        assert all(p < i for p in node.parents)
    tape.backward(b)
    assert tape.grad(a).shape == (3,)


def test_backward_seed_shape_mismatch():
    tape = Tape()
    a = tape.leaf(np.ones((2, 2)))
    out = a * 3.0
    with pytest.raises(DimensionError):
        tape.backward(out, seed=np.ones(3))


def test_backward_requires_scalar_without_seed():
    tape = Tape()
    a = tape.leaf(np.ones((2, 2)))
    with pytest.raises(DimensionError):
        tape.backward(a * 1.0)


def test_module_level_backward_returns_parameter_grads():
    from cfgen.nn.tape import Var
    spec = MlpSpec((2, 2), ("identity",))
    params = [Tensor(np.eye(2)), Tensor(np.zeros(2))]
    _, tape = forward(spec, params, Tensor(np.ones(2)))
    # extend the tape so it ends in a scalar loss, then run from the last node
    Var(tape, len(tape.nodes) - 1).sum()
    grads = backward(tape)
    assert len(grads) == 2
    assert grads[0].shape == (2, 2) and grads[1].shape == (2,)


def test_sgd_step_example():
    p = [Tensor(np.array(1.0))]
    step(sgd(0.1), p, [np.array(2.0)])
    assert abs(float(p[0].data) - 0.8) < 1e-15


def test_zero_gradient_leaves_params_unchanged():
    for opt in (sgd(0.1), adam(0.1)):
        p = [Tensor(np.array([1.5, -2.0]))]
        before = p[0].data.copy()
        step(opt, p, [np.zeros(2)])
        np.testing.assert_array_equal(p[0].data, before)


def test_adam_first_step_bias_corrected():
    p = [Tensor(np.array(1.0))]
    step(adam(1e-3), p, [np.array(1.0)])
    # mhat = 1, vhat = 1 -> update = lr / (1 + eps)
    assert abs((1.0 - float(p[0].data)) - 1e-3) < 1e-9


def test_non_finite_gradient_aborts():
    p = [Tensor(np.array(1.0))]
    with pytest.raises(NumericError):
        step(sgd(0.1), p, [np.array(np.inf)])


def test_optimizer_trajectory_deterministic():
    def run():
        rng = np.random.default_rng(3)
        spec = MlpSpec((3, 4, 1), ("relu", "identity"))
        params = init_params(spec, rng)
        opt = adam(1e-2)
        x = rng.normal(size=(8, 3))
        for _ in range(5):
            tape = Tape()
            pvars = [tape.leaf(p.data) for p in params]
            out = forward_var(tape, spec, pvars, tape.const(x))
            tape.backward(out.square().sum())
            step(opt, params, [tape.grad(v) for v in pvars])
        return params_hash(params)
    assert run() == run()


def test_dropout_rate_zero_is_identity_and_eval_disables():
    rng = np.random.default_rng(0)
    spec0 = MlpSpec((3, 3), ("identity",), (0.0,))
    spec5 = MlpSpec((3, 3), ("identity",), (0.5,))
    params = [Tensor(np.eye(3)), Tensor(np.zeros(3))]
    x = Tensor(rng.normal(size=(4, 3)))
    out0, _ = forward(spec0, params, x, training=True, rng=np.random.default_rng(1))
    np.testing.assert_array_equal(out0.data, x.data)
    out_eval, _ = forward(spec5, params, x, training=False)
    np.testing.assert_array_equal(out_eval.data, x.data)
    out_train, _ = forward(spec5, params, x, training=True, rng=np.random.default_rng(1))
    # inverted dropout: entries are either zero or scaled by 1/(1-rate)
    ratio = out_train.data / x.data
    assert set(np.round(ratio.reshape(-1), 12)) <= {0.0, 2.0}


def test_shape_errors_name_layer():
    spec = MlpSpec((3, 4, 2), ("relu", "identity"))
    params = init_params(spec, np.random.default_rng(0))
    with pytest.raises(DimensionError, match="layer 0"):
        forward(spec, params, Tensor(np.ones((2, 5))))
    bad = [Tensor(np.ones((3, 3))), *params[1:]]
    with pytest.raises(DimensionError, match="layer 0"):
        forward(spec, bad, Tensor(np.ones((2, 3))))


def test_maximum_tie_routes_to_first_argument():
    tape = Tape()
    a = tape.leaf(np.array([1.0, 2.0]))
    b = tape.leaf(np.array([1.0, 5.0]))
    m = maximum(a, b).sum()
    tape.backward(m)
    np.testing.assert_array_equal(tape.grad(a), [1.0, 0.0])
    np.testing.assert_array_equal(tape.grad(b), [0.0, 1.0])


def test_checkpoint_roundtrip_bitexact(tmp_path):
    rng = np.random.default_rng(11)
    spec = MlpSpec((4, 7, 3), ("relu", "sigmoid"), (0.1, 0.0))
    params = init_params(spec, rng)
    path = tmp_path / "model.bin"
    save_mlp(path, spec, params)
    spec2, params2 = load_mlp(path)
    assert spec2 == spec
    assert params_hash(params) == params_hash(params2)
    for a, b in zip(params, params2):
        assert a.data.tobytes() == b.data.tobytes()


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"not a checkpoint")
    with pytest.raises(ParseError):
        load_mlp(path)


def test_tensor_rejects_non_finite():
    with pytest.raises(NumericError):
        Tensor(np.array([1.0, np.nan]))
