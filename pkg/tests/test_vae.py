"""The amortized counterfactual generator."""

import numpy as np
import pytest

from cfgen.classifier import predict_class
from cfgen.errors import StateError
from cfgen.nn import Tensor
from cfgen.vae import (CfVae, LatentPrior, VaeTrainConfig, base_gen_cf_loss,
                       build_cf_vae, decode_latent, encode, generate,
                       hinge_validity_loss, kl_closed_form, sample_latent)

from helpers import finite_difference, max_rel_error


def test_encode_deterministic(bn_vae):
    X = np.random.default_rng(0).uniform(size=(5, 3))
    y = np.ones(5)
    a = encode(bn_vae, X, y)
    b = encode(bn_vae, X, y)
    assert a[0].tobytes() == b[0].tobytes() and a[1].tobytes() == b[1].tobytes()


def test_encode_std_in_unit_interval(bn_vae):
    X = np.random.default_rng(1).uniform(size=(1000, 3))
    _, std = encode(bn_vae, X, np.ones(1000))
    assert (std > 0).all() and (std < 1).all()


def test_conditioning_changes_mean(bn_vae):
    X = np.random.default_rng(2).uniform(size=(10, 3))
    m0, _ = encode(bn_vae, X, np.zeros(10))
    m1, _ = encode(bn_vae, X, np.ones(10))
    assert np.abs(m0 - m1).max() > 1e-6


def test_sample_latent_zero_std():
    mean = np.array([[1.0, -2.0]])
    z = sample_latent(mean, np.zeros_like(mean), np.random.default_rng(0))
    np.testing.assert_array_equal(z, mean)


def test_sample_latent_monte_carlo_mean():
    rng = np.random.default_rng(3)
    mean = np.array([0.7, -1.2])
    std = np.array([0.5, 2.0])
    draws = np.stack([sample_latent(mean, std, rng) for _ in range(100000)])
    se = std / np.sqrt(len(draws))
    assert (np.abs(draws.mean(axis=0) - mean) < 3 * se).all()


def test_sample_latent_gradient_flows():
    eps_rng_seed = 4

    def loss_of(mean_flat):
        rng = np.random.default_rng(eps_rng_seed)
        z = mean_flat + 0.3 * rng.standard_normal(mean_flat.shape)
        return float((z ** 2).sum())

    from cfgen.nn import Tape
    mean0 = np.array([0.5, -0.4, 1.1])
    tape = Tape()
    m = tape.leaf(mean0)
    rng = np.random.default_rng(eps_rng_seed)
    eps = tape.const(rng.standard_normal(mean0.shape))
    z = m + tape.const(0.3) * eps
    tape.backward(z.square().sum())
    fd = finite_difference(loss_of, mean0)
    assert max_rel_error(tape.grad(m), fd) < 1e-4


def test_kl_identical_distributions_zero():
    prior = LatentPrior()
    assert kl_closed_form(np.zeros(4), np.ones(4), prior, 0) == 0.0


def test_kl_mean_shift():
    assert abs(kl_closed_form(np.array([1.0]), np.array([1.0])) - 0.5) < 1e-12


def test_kl_matches_monte_carlo():
    rng = np.random.default_rng(5)
    mu_q, sd_q = np.array([0.8]), np.array([0.6])
    z = mu_q + sd_q * rng.standard_normal(100000)
    log_q = -0.5 * np.log(2 * np.pi * sd_q ** 2) - (z - mu_q) ** 2 / (2 * sd_q ** 2)
    log_p = -0.5 * np.log(2 * np.pi) - z ** 2 / 2
    mc = float((log_q - log_p).mean())
    assert abs(kl_closed_form(mu_q, sd_q) - mc) < 1e-2


def test_hinge_examples():
    assert hinge_validity_loss(np.array([0.2, 0.8]), 1, 0.05) == pytest.approx(-0.05)
    assert hinge_validity_loss(np.array([0.8, 0.2]), 1, 0.05) == pytest.approx(0.6)


def test_hinge_gradient_sign():
    margin = 0.05

    def loss_of(s):
        return hinge_validity_loss(s, 1, margin)

    s = np.array([0.8, 0.2])
    fd = finite_difference(loss_of, s, eps=1e-6)
    assert fd[1] < 0  # raising the target score lowers the loss
    assert fd[0] > 0


def crafted_identity_vae(d=3, latent=4):
    """Decoder reproduces a fixed point; encoder matches the prior exactly."""
    vae = build_cf_vae(d, None, latent_dim=latent, seed=0)
    for p in vae.enc_mean:
        p.data[:] = 0.0  # posterior mean = 0
    for p in vae.enc_var:
        p.data[:] = 0.0  # posterior std = sigmoid(0) = 0.5
    vae.prior = LatentPrior(stds={1: np.full(latent, 0.5)})
    for p in vae.dec:
        p.data[:] = 0.0
    vae.dec[-1].data[:] = 0.0  # decoder output = sigmoid(0) = 0.5 everywhere
    vae.trained = True
    return vae


def test_loss_terms_vanish_for_reconstructing_decoder(bn_classifier):
    vae = crafted_identity_vae()
    X = np.full((6, 3), 0.5)  # equals the decoder's constant output
    cfg = VaeTrainConfig(validity_weight=150.0, margin=0.15, seed=0)
    terms, tape, _ = base_gen_cf_loss(vae, bn_classifier, X, np.ones(6, dtype=int),
                                      cfg, np.random.default_rng(0))
    assert float(terms.recon.value) == 0.0
    assert float(terms.kl.value) == 0.0
    # with dist and KL exactly zero, the loss is the weighted hinge alone
    assert float(terms.total.value) == pytest.approx(
        150.0 * float(terms.hinge.value), abs=0)


def test_loss_terms_match_independent_recomputation(bn_setup, bn_classifier, bn_vae):
    from cfgen.classifier import class_scores
    X = bn_setup["X"]["test"][:8]
    y = np.ones(8, dtype=int)
    cfg = VaeTrainConfig(validity_weight=150.0, margin=0.15, seed=0)
    terms, tape, _ = base_gen_cf_loss(bn_vae, bn_classifier, X, y, cfg,
                                      np.random.default_rng(7))
    x_cf = terms.x_cf.value
    recon = float(np.abs(X - x_cf).sum(axis=1).mean())
    scores = class_scores(bn_classifier, x_cf)
    hinges = [max(np.delete(s, t).max() - s[t], -0.15) for s, t in zip(scores, y)]
    hinge = float(np.mean(hinges))
    assert recon == pytest.approx(float(terms.recon.value), abs=1e-12)
    assert hinge == pytest.approx(float(terms.hinge.value), abs=1e-12)
    total = recon + 150.0 * hinge + float(terms.kl.value)
    assert total == pytest.approx(float(terms.total.value), abs=1e-9)


def test_full_loss_gradient_matches_finite_differences(bn_classifier):
    from helpers import flatten_params, unflatten_like
    d = 3
    vae = build_cf_vae(d, None, latent_dim=2, seed=1)
    X = np.random.default_rng(2).uniform(0.2, 0.8, size=(3, d))
    y = np.ones(3, dtype=int)
    cfg = VaeTrainConfig(validity_weight=2.0, margin=0.1, seed=0)
    params = vae.all_params()

    def loss_of(flat):
        arrays = unflatten_like(flat, params)
        saved = [p.data.copy() for p in params]
        for p, a in zip(params, arrays):
            p.data[:] = a
        terms, _, _ = base_gen_cf_loss(vae, bn_classifier, X, y, cfg,
                                       np.random.default_rng(3))
        val = float(terms.total.value)
        for p, s in zip(params, saved):
            p.data[:] = s
        return val

    terms, tape, pvars = base_gen_cf_loss(vae, bn_classifier, X, y, cfg,
                                          np.random.default_rng(3))
    tape.backward(terms.total)
    flat_vars = pvars["enc_mean"] + pvars["enc_var"] + pvars["dec"]
    grads = np.concatenate([tape.grad(v).ravel() for v in flat_vars])
    fd = finite_difference(loss_of, flatten_params(params))
    assert max_rel_error(grads, fd) < 1e-4


def test_loss_decreases_over_first_epochs(bn_setup, bn_classifier):
    from cfgen.vae import train_base
    vae = build_cf_vae(3, bn_setup["schema"], seed=0)
    train_base(vae, bn_setup["X"]["train"], bn_classifier,
               VaeTrainConfig(150.0, 0.15, epochs=10, seed=0, target_class=1))
    h = vae.loss_history
    assert all(h[i + 1] < h[i] for i in range(len(h) - 1))


def test_generate_with_forced_zero_std_returns_decoded_mean(bn_vae):
    vae = bn_vae.clone()
    # saturate the variance network: sigmoid(-1e9) underflows to exactly 0
    vae.enc_var[-2].data[:] = 0.0
    vae.enc_var[-1].data[:] = -1e9
    X = np.random.default_rng(4).uniform(size=(5, 3))
    y = np.ones(5, dtype=int)
    mean, std = encode(vae, X, y)
    assert (std == 0.0).all()
    cfs = generate(vae, X, y, K=1, seed=0)
    np.testing.assert_array_equal(cfs[:, 0, :], decode_latent(vae, mean, y))


def test_generate_deterministic_and_forward_only(bn_vae):
    from cfgen.nn import params_hash
    X = np.random.default_rng(5).uniform(size=(7, 3))
    before = params_hash(bn_vae.all_params())
    a = generate(bn_vae, X, 1, K=4, seed=9)
    b = generate(bn_vae, X, 1, K=4, seed=9)
    assert a.tobytes() == b.tobytes()
    assert params_hash(bn_vae.all_params()) == before


def test_generate_untrained_raises():
    vae = build_cf_vae(3, None, seed=0)
    with pytest.raises(StateError):
        generate(vae, np.zeros((1, 3)), 1, K=1)


def test_generate_warns_when_target_already_predicted(bn_setup, bn_classifier, bn_vae):
    X = bn_setup["X"]["test"][:20]
    pred = predict_class(bn_classifier, X)
    with pytest.warns(UserWarning):
        generate(bn_vae, X, pred, K=1, seed=0, classifier=bn_classifier)


def test_classifier_frozen_during_training(bn_setup, bn_classifier):
    before = bn_classifier.hash()
    vae = build_cf_vae(3, bn_setup["schema"], seed=3)
    from cfgen.vae import train_base
    train_base(vae, bn_setup["X"]["train"][:256], bn_classifier,
               VaeTrainConfig(150.0, 0.15, epochs=2, seed=0, target_class=1))
    assert bn_classifier.hash() == before


def test_checkpoint_roundtrip(tmp_path, bn_vae):
    bn_vae.save(tmp_path / "vae")
    back = CfVae.load(tmp_path / "vae")
    X = np.random.default_rng(6).uniform(size=(4, 3))
    a = generate(bn_vae, X, 1, K=2, seed=1)
    b = generate(back, X, 1, K=2, seed=1)
    assert a.tobytes() == b.tobytes()
