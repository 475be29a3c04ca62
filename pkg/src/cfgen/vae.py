"""Amortized counterfactual generator: a class-conditioned encoder/decoder.

The encoder (one network for the latent mean, one for the latent std, the
latter with a final sigmoid) and the decoder (final sigmoid) each take the
target class appended as one extra scalar input. Training minimizes, per
batch: mean[ dist(x, x_cf) + validity_weight * hinge(h(x_cf), y', margin) ]
+ mean KL(q(z|x,y') || prior), with x_cf decoded from a reparameterized
latent sample. The classifier stays frozen throughout; its parameter hash is
checked before and after every training run.

The dist term defaults to L1 on the encoded vector and is pluggable, which is
how causal proximity and constraint penalties hook in (see feasibility.py).
"""

from __future__ import annotations

import copy
import json
import logging
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .classifier import ClassifierModel, predict_class, scores_var
from .data import FeatureSchema
from .errors import NumericError, StateError
from .nn import MlpSpec, Tape, Tensor, init_params, mlp_eval, sgd, step
from .nn.checkpoint import load_mlp, save_mlp
from .nn.layers import forward_var
from .nn.tape import Var, concat, maximum

log = logging.getLogger(__name__)

ENCODER_HIDDEN = (20, 16, 14, 12)
DECODER_HIDDEN = (12, 14, 16, 20)
HIDDEN_DROPOUT = 0.1


@dataclass(frozen=True)
class LatentPrior:
    """Per-class latent prior; defaults to a standard normal for every class."""

    means: dict[int, np.ndarray] = field(default_factory=dict)
    stds: dict[int, np.ndarray] = field(default_factory=dict)

    def mean_for(self, y: int, dim: int) -> np.ndarray:
        return self.means.get(int(y), np.zeros(dim))

    def std_for(self, y: int, dim: int) -> np.ndarray:
        s = self.stds.get(int(y), np.ones(dim))
        if np.any(s <= 0):
            raise ValueError("prior stds must be positive")
        return s

    def batch(self, y: np.ndarray, dim: int) -> tuple[np.ndarray, np.ndarray]:
        mu = np.stack([self.mean_for(v, dim) for v in y])
        sd = np.stack([self.std_for(v, dim) for v in y])
        return mu, sd


@dataclass
class VaeTrainConfig:
    validity_weight: float = 150.0
    margin: float = 0.15
    epochs: int = 50
    batch_size: int = 64
    lr: float = 1e-3
    seed: int = 0
    latent_samples: int = 1
    # None trains each row toward the flip of its current prediction; an int
    # conditions every row on that one target class (the usual workflow when
    # all explanations aim at a single "desired" outcome).
    target_class: int | None = None
    # Optimize the batch sum instead of the batch mean: gradient steps scale
    # with the number of rows, so more labeled feedback pulls harder. Used by
    # fine-tuning, where the objective is a sum over the labeled queries.
    sum_objective: bool = False

    def __post_init__(self):
        if self.validity_weight <= 0:
            raise ValueError("validity weight must be positive")
        if self.margin < 0:
            raise ValueError("margin must be nonnegative")


@dataclass
class CfVae:
    schema: FeatureSchema | None
    feature_width: int
    latent_dim: int
    enc_spec: MlpSpec
    enc_var_spec: MlpSpec
    dec_spec: MlpSpec
    enc_mean: list[Tensor]
    enc_var: list[Tensor]
    dec: list[Tensor]
    prior: LatentPrior = field(default_factory=LatentPrior)
    trained: bool = False
    loss_history: list[float] = field(default_factory=list, repr=False)

    def all_params(self) -> list[Tensor]:
        return self.enc_mean + self.enc_var + self.dec

    def clone(self) -> "CfVae":
        c = copy.copy(self)
        c.enc_mean = [Tensor(p.data.copy()) for p in self.enc_mean]
        c.enc_var = [Tensor(p.data.copy()) for p in self.enc_var]
        c.dec = [Tensor(p.data.copy()) for p in self.dec]
        c.loss_history = list(self.loss_history)
        return c

    def save(self, dirpath: str | Path) -> None:
        d = Path(dirpath)
        d.mkdir(parents=True, exist_ok=True)
        meta = {
            "feature_width": self.feature_width,
            "latent_dim": self.latent_dim,
            "trained": self.trained,
            "schema": self.schema.to_config() if self.schema else None,
        }
        (d / "model.json").write_text(json.dumps(meta, indent=2))
        save_mlp(d / "enc_mean.bin", self.enc_spec, self.enc_mean)
        save_mlp(d / "enc_var.bin", self.enc_var_spec, self.enc_var)
        save_mlp(d / "dec.bin", self.dec_spec, self.dec)

    @staticmethod
    def load(dirpath: str | Path) -> "CfVae":
        d = Path(dirpath)
        meta = json.loads((d / "model.json").read_text())
        enc_spec, enc_mean = load_mlp(d / "enc_mean.bin")
        enc_var_spec, enc_var = load_mlp(d / "enc_var.bin")
        dec_spec, dec = load_mlp(d / "dec.bin")
        schema = FeatureSchema.from_config(meta["schema"]) if meta["schema"] else None
        return CfVae(schema=schema, feature_width=meta["feature_width"],
                     latent_dim=meta["latent_dim"], enc_spec=enc_spec,
                     enc_var_spec=enc_var_spec, dec_spec=dec_spec,
                     enc_mean=enc_mean, enc_var=enc_var, dec=dec,
                     trained=bool(meta["trained"]))


def build_cf_vae(feature_width: int, schema: FeatureSchema | None = None,
                 latent_dim: int = 10, seed: int = 0) -> CfVae:
    """Fresh generator with the stock layer stacks and seeded init."""
    d = feature_width
    enc_widths = (d + 1,) + ENCODER_HIDDEN + (latent_dim,)
    dec_widths = (latent_dim + 1,) + DECODER_HIDDEN + (d,)
    n_hidden = len(ENCODER_HIDDEN)
    hidden_acts = ("relu",) * n_hidden
    hidden_drop = (HIDDEN_DROPOUT,) * n_hidden
    enc_spec = MlpSpec(enc_widths, hidden_acts + ("identity",), hidden_drop + (0.0,))
    enc_var_spec = MlpSpec(enc_widths, hidden_acts + ("sigmoid",), hidden_drop + (0.0,))
    dec_spec = MlpSpec(dec_widths, hidden_acts + ("sigmoid",), hidden_drop + (0.0,))
    rng = np.random.default_rng(seed)
    return CfVae(schema=schema, feature_width=d, latent_dim=latent_dim,
                 enc_spec=enc_spec, enc_var_spec=enc_var_spec, dec_spec=dec_spec,
                 enc_mean=init_params(enc_spec, rng),
                 enc_var=init_params(enc_var_spec, rng),
                 dec=init_params(dec_spec, rng))


# -- plain (tape-free) operations ---------------------------------------------

def encode(vae: CfVae, X: np.ndarray, y_target: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and std (sigmoid output, in (0,1)) for each row."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    inp = np.column_stack([X, np.asarray(y_target, dtype=np.float64).reshape(-1)])
    mean = mlp_eval(vae.enc_spec, vae.enc_mean, inp)
    std = mlp_eval(vae.enc_var_spec, vae.enc_var, inp)
    return mean, std


def decode_latent(vae: CfVae, Z: np.ndarray, y_target: np.ndarray) -> np.ndarray:
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    inp = np.column_stack([Z, np.asarray(y_target, dtype=np.float64).reshape(-1)])
    return mlp_eval(vae.dec_spec, vae.dec, inp)


def sample_latent(mean: np.ndarray, std: np.ndarray,
                  rng: np.random.Generator) -> np.ndarray:
    """Reparameterized draw: mean + std * eps."""
    if np.shape(mean) != np.shape(std):
        raise ValueError("mean/std shapes differ")
    return mean + std * rng.standard_normal(np.shape(mean))


def kl_closed_form(mean: np.ndarray, std: np.ndarray,
                   prior: LatentPrior | None = None, y: int = 0) -> float:
    """KL( N(mean, std^2) || N(prior_mean, prior_std^2) ), summed over dims."""
    mean = np.asarray(mean, dtype=np.float64).reshape(-1)
    std = np.asarray(std, dtype=np.float64).reshape(-1)
    prior = prior or LatentPrior()
    mu_p = prior.mean_for(y, mean.size)
    sd_p = prior.std_for(y, mean.size)
    terms = (np.log(sd_p) - np.log(std)
             + (std ** 2 + (mean - mu_p) ** 2) / (2.0 * sd_p ** 2) - 0.5)
    return float(terms.sum())


def hinge_validity_loss(scores: np.ndarray, y_target: int, margin: float) -> float:
    """max( max_{y != y'} s_y - s_{y'}, -margin ) on a probability vector."""
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    other = np.delete(s, y_target).max()
    return float(max(other - s[y_target], -margin))


# -- loss graph ----------------------------------------------------------------

@dataclass
class LossTerms:
    """Var handles into one training-step tape."""

    total: Var
    recon: Var
    hinge: Var
    kl: Var
    x_cf: Var
    extras: dict[str, Var] = field(default_factory=dict)


DistBuilder = Callable[[Tape, Var, Var], Var]        # (tape, x_const, x_cf) -> (n,) rows
PenaltyBuilder = Callable[[Tape, Var, Var], Var]     # (tape, x_const, x_cf) -> scalar


@dataclass
class QueryTerm:
    """Feedback-matching term: weight * mean (label - sim(x_cf, candidate))^2."""

    candidates: np.ndarray  # (n, d) encoded candidate counterfactuals
    labels: np.ndarray      # (n,) binary
    weight: float


def build_loss(tape: Tape, vae: CfVae, param_vars: dict[str, list[Var]],
               classifier: ClassifierModel, X: np.ndarray, y_target: np.ndarray,
               config: VaeTrainConfig, rng: np.random.Generator,
               training: bool = True,
               dist_builder: DistBuilder | None = None,
               penalty_builder: PenaltyBuilder | None = None,
               query: QueryTerm | None = None) -> LossTerms:
    """Assemble one step's loss on `tape`; returns handles to every term."""
    n = X.shape[0]
    yt = np.asarray(y_target, dtype=np.int64)
    x_const = tape.const(X)
    y_col = tape.const(yt.astype(np.float64).reshape(n, 1))
    enc_in = concat([x_const, y_col])
    mean = forward_var(tape, vae.enc_spec, param_vars["enc_mean"], enc_in,
                       training=training, rng=rng)
    std = forward_var(tape, vae.enc_var_spec, param_vars["enc_var"], enc_in,
                      training=training, rng=rng)

    recon_rows = None
    hinge_rows = None
    x_cf = None
    for _ in range(max(1, config.latent_samples)):
        eps = tape.const(rng.standard_normal((n, vae.latent_dim)))
        z = mean + std * eps
        dec_in = concat([z, y_col])
        x_cf = forward_var(tape, vae.dec_spec, param_vars["dec"], dec_in,
                           training=training, rng=rng)
        if dist_builder is None:
            rows = (x_const - x_cf).abs().sum(axis=1)
        else:
            rows = dist_builder(tape, x_const, x_cf)
        scores = scores_var(tape, classifier, x_cf)
        s_target = scores.take_per_row(yt)
        mask = np.ones((n, classifier.n_classes))
        mask[np.arange(n), yt] = 0.0
        s_other = (scores * tape.const(mask)).max(axis=1)
        h = maximum(s_other - s_target, tape.const(-config.margin))
        recon_rows = rows if recon_rows is None else recon_rows + rows
        hinge_rows = h if hinge_rows is None else hinge_rows + h
    k = float(max(1, config.latent_samples))
    recon = recon_rows.mean() * (1.0 / k)
    hinge = hinge_rows.mean() * (1.0 / k)

    mu_p, sd_p = vae.prior.batch(yt, vae.latent_dim)
    mu_p_c, sd_p_c = tape.const(mu_p), tape.const(sd_p)
    kl_elts = (sd_p_c.log() - std.log()
               + (std.square() + (mean - mu_p_c).square()) / (sd_p_c.square() * 2.0)
               - 0.5)
    kl = kl_elts.sum(axis=1).mean()

    total = recon + hinge * config.validity_weight + kl
    extras: dict[str, Var] = {}
    if penalty_builder is not None:
        pen = penalty_builder(tape, x_const, x_cf)
        extras["penalty"] = pen
        total = total + pen
    if query is not None:
        diff = tape.const(query.candidates) - x_cf
        sim = (-diff.square().sum(axis=1)).exp()
        qterm = (tape.const(query.labels.astype(np.float64)) - sim).square().mean()
        extras["query"] = qterm
        total = total + qterm * query.weight
    if not np.isfinite(total.value):
        raise NumericError(f"non-finite loss on a batch of {n} rows")
    return LossTerms(total=total, recon=recon, hinge=hinge, kl=kl,
                     x_cf=x_cf, extras=extras)


def base_gen_cf_loss(vae: CfVae, classifier: ClassifierModel, X: np.ndarray,
                     y_target: np.ndarray, config: VaeTrainConfig,
                     rng: np.random.Generator | None = None,
                     training: bool = False) -> tuple[LossTerms, Tape, dict[str, list[Var]]]:
    """One loss evaluation with gradients available via tape.backward."""
    tape = Tape()
    pvars = push_params(tape, vae)
    terms = build_loss(tape, vae, pvars, classifier, X, y_target, config,
                       rng or np.random.default_rng(0), training=training)
    return terms, tape, pvars


def push_params(tape: Tape, vae: CfVae) -> dict[str, list[Var]]:
    return {
        "enc_mean": [tape.leaf(p.data) for p in vae.enc_mean],
        "enc_var": [tape.leaf(p.data) for p in vae.enc_var],
        "dec": [tape.leaf(p.data) for p in vae.dec],
    }


# -- training ------------------------------------------------------------------

def train_with(vae: CfVae, X_train: np.ndarray, classifier: ClassifierModel,
               config: VaeTrainConfig,
               dist_builder: DistBuilder | None = None,
               penalty_builder: PenaltyBuilder | None = None,
               query_data: tuple[np.ndarray, np.ndarray, float] | None = None) -> CfVae:
    """Shared training loop; the per-row target class follows
    ``config.target_class`` (fixed class, or the flip of the frozen
    classifier's prediction when None). ``query_data`` is an optional
    (candidates, labels, weight) triple aligned row-wise with X_train."""
    frozen = classifier.hash()
    if config.target_class is None:
        y_target = 1 - np.asarray(predict_class(classifier, X_train), dtype=np.int64)
    else:
        y_target = np.full(len(X_train), int(config.target_class), dtype=np.int64)
    rng = np.random.default_rng(config.seed)
    params = vae.all_params()
    opt = sgd(config.lr)
    n = len(X_train)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            query = None
            if query_data is not None:
                cands, labels, weight = query_data
                query = QueryTerm(candidates=cands[idx], labels=labels[idx],
                                  weight=weight)
            tape = Tape()
            pvars = push_params(tape, vae)
            terms = build_loss(tape, vae, pvars, classifier, X_train[idx],
                               y_target[idx], config, rng, training=True,
                               dist_builder=dist_builder,
                               penalty_builder=penalty_builder,
                               query=query)
            tape.backward(terms.total)
            flat_vars = pvars["enc_mean"] + pvars["enc_var"] + pvars["dec"]
            grads = [tape.grad(v) for v in flat_vars]
            if config.sum_objective:
                grads = [g * len(idx) for g in grads]
            step(opt, params, grads)
            epoch_loss += float(terms.total.value) * len(idx)
        vae.loss_history.append(epoch_loss / n)
        log.info("epoch %3d  loss %.5f", epoch + 1, vae.loss_history[-1])
    if classifier.hash() != frozen:
        raise StateError("classifier parameters changed during generator training")
    vae.trained = True
    return vae


def train_base(vae: CfVae, X_train: np.ndarray, classifier: ClassifierModel,
               config: VaeTrainConfig) -> CfVae:
    return train_with(vae, X_train, classifier, config)


def generate(vae: CfVae, X: np.ndarray, y_target, K: int, seed: int = 0,
             classifier: ClassifierModel | None = None) -> np.ndarray:
    """K decoded counterfactual candidates per row, shape (n, K, d).

    Forward passes only: no optimizer state exists here. Outputs stay in the
    encoded space (soft one-hot blocks allowed); use data.decode for reports.
    """
    if not vae.trained:
        raise StateError("generator is untrained; train it before generating")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n = X.shape[0]
    yt = np.broadcast_to(np.asarray(y_target, dtype=np.int64).reshape(-1), (n,)).copy() \
        if np.ndim(y_target) else np.full(n, int(y_target), dtype=np.int64)
    if classifier is not None:
        same = predict_class(classifier, X) == yt
        if np.any(same):
            warnings.warn(f"{int(same.sum())} of {n} inputs already predict the "
                          "target class; counterfactuals are not informative there")
    rng = np.random.default_rng(seed)
    mean, std = encode(vae, X, yt)
    eps = rng.standard_normal((n, K, vae.latent_dim))
    Z = mean[:, None, :] + std[:, None, :] * eps
    flat = Z.reshape(n * K, vae.latent_dim)
    y_rep = np.repeat(yt, K)
    out = decode_latent(vae, flat, y_rep)
    return out.reshape(n, K, vae.feature_width)
