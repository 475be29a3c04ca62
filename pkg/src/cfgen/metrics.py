"""Evaluation metrics for batches of generated counterfactuals.

Batch layout everywhere: inputs X are (N, d) encoded rows, counterfactuals
are (N, K, d) encoded rows, target classes are per input. Constraint checks
run on decoded raw values; distance-style metrics (the autoencoder ratios)
run on encoded vectors; continuous proximity runs on raw deltas in units of
each feature's median absolute deviation.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .classifier import ClassifierModel, predict_class
from .data import FeatureSchema, MadStats, decode
from .errors import ConfigurationError
from .nn import MlpSpec, Tape, Tensor, init_params, mlp_eval, sgd, step
from .nn.layers import forward_var
from .oracle import OracleSpec, apply_oracle
from .scm import Scm

log = logging.getLogger(__name__)

TOL = 1e-9


@dataclass
class MetricsReport:
    validity: float
    cont_proximity: float
    cat_proximity: float | None
    constraint_feasibility: float | None
    causal_edge: float | None
    im1: float | None
    im2: float | None
    n_inputs: int
    k_per_input: int

    def to_dict(self) -> dict:
        return {
            "validity": self.validity,
            "cont_proximity": self.cont_proximity,
            "cat_proximity": self.cat_proximity,
            "constraint_feasibility": self.constraint_feasibility,
            "causal_edge": self.causal_edge,
            "im1": self.im1,
            "im2": self.im2,
            "n_inputs": self.n_inputs,
            "k_per_input": self.k_per_input,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_table(self) -> str:
        rows = [("target-class validity", self.validity),
                ("cont proximity", self.cont_proximity),
                ("cat proximity", self.cat_proximity),
                ("constraint feasibility", self.constraint_feasibility),
                ("causal-edge score", self.causal_edge),
                ("im1", self.im1),
                ("im2", self.im2)]
        width = max(len(r[0]) for r in rows)
        lines = [f"{name:<{width}}  " + ("-" if v is None else f"{v: .4f}")
                 for name, v in rows]
        lines.append(f"{'batch':<{width}}  {self.n_inputs} inputs x {self.k_per_input} CFs")
        return "\n".join(lines)


def _flat(cfs: np.ndarray) -> tuple[np.ndarray, int, int]:
    cfs = np.asarray(cfs, dtype=np.float64)
    if cfs.ndim != 3:
        raise ConfigurationError("counterfactual batch must be (N, K, d)")
    n, k, d = cfs.shape
    return cfs.reshape(n * k, d), n, k


def target_class_validity(classifier: ClassifierModel, cfs: np.ndarray,
                          y_target: np.ndarray) -> float:
    """Fraction of counterfactuals the frozen model assigns to the target class."""
    flat, n, k = _flat(cfs)
    if flat.size == 0:
        raise ConfigurationError("empty counterfactual batch")
    pred = predict_class(classifier, flat)
    want = np.repeat(np.asarray(y_target, dtype=np.int64), k)
    return float(np.mean(pred == want))


def cont_proximity(cfs: np.ndarray, X: np.ndarray, mads: MadStats,
                   schema: FeatureSchema) -> float:
    """-1 * mean |raw delta| / MAD over inputs, CFs, and continuous features."""
    flat, n, k = _flat(cfs)
    cont = [c.name for c in schema.continuous]
    if not cont:
        raise ConfigurationError("no continuous features")
    raw_cf = decode(schema, flat)
    raw_x = decode(schema, np.asarray(X, dtype=np.float64))
    total = 0.0
    for name in cont:
        d = np.abs(raw_cf[name].to_numpy().reshape(n, k)
                   - raw_x[name].to_numpy()[:, None])
        total += float((d / mads[name]).sum())
    return -total / (n * k * len(cont))


def cat_proximity(cfs: np.ndarray, X: np.ndarray, schema: FeatureSchema) -> float | None:
    """-1 * mean mismatch rate over categorical features; None when there are none."""
    cats = [c.name for c in schema.categorical]
    if not cats:
        return None
    flat, n, k = _flat(cfs)
    raw_cf = decode(schema, flat)
    raw_x = decode(schema, np.asarray(X, dtype=np.float64))
    total = 0
    for name in cats:
        mism = (raw_cf[name].to_numpy().reshape(n, k)
                != raw_x[name].to_numpy()[:, None])
        total += int(mism.sum())
    return -total / (n * k * len(cats))


def _monotonic_sub_scores(cfs: np.ndarray, X: np.ndarray, schema: FeatureSchema,
                          causes: Sequence[str], effect: str) -> tuple[float, float]:
    """S1: among CFs whose causes all strictly rise, % whose effect rises.
    S2: mirrored for falls.

    A sub-constraint is vacuously 100 when its antecedent applies to fewer
    than 1% of the batch: a proportion estimated from a handful of rows says
    nothing about the generator, and zeroing the harmonic mean on it would
    let noise decide the score.
    """
    flat, n, k = _flat(cfs)
    raw_cf = decode(schema, flat)
    raw_x = decode(schema, np.asarray(X, dtype=np.float64))
    deltas = {c: raw_cf[c].to_numpy().reshape(n * k)
              - np.repeat(raw_x[c].to_numpy(), k) for c in list(causes) + [effect]}
    up = np.all([deltas[c] > TOL for c in causes], axis=0)
    down = np.all([deltas[c] < -TOL for c in causes], axis=0)
    dv = deltas[effect]
    support = max(1, int(np.ceil(0.01 * n * k)))
    s1 = float(np.mean(dv[up] > TOL) * 100.0) if up.sum() >= support else 100.0
    s2 = float(np.mean(dv[down] < -TOL) * 100.0) if down.sum() >= support else 100.0
    return s1, s2


def constraint_feasibility(cfs: np.ndarray, X: np.ndarray, schema: FeatureSchema,
                           spec: OracleSpec) -> float:
    """Monotonic constraints report the harmonic mean of the two sub-constraint
    percentages (0 when both are 0); other constraint kinds report the plain
    percentage of satisfying counterfactuals."""
    if spec.kind == "scm-monotonic":
        s1, s2 = _monotonic_sub_scores(cfs, X, schema,
                                       spec.params["causes"], spec.params["effect"])
        return harmonic_mean(s1, s2)
    flat, n, k = _flat(cfs)
    raw_cf = decode(schema, flat).to_dict("records")
    raw_x = decode(schema, np.asarray(X, dtype=np.float64)).to_dict("records")
    hits = 0
    for i in range(n):
        for j in range(k):
            hits += apply_oracle(spec, raw_x[i], raw_cf[i * k + j], schema)
    return 100.0 * hits / (n * k)


def harmonic_mean(s1: float, s2: float) -> float:
    if s1 + s2 == 0.0:
        return 0.0
    return 2.0 * s1 * s2 / (s1 + s2)


def causal_edge_score(cfs: np.ndarray, X: np.ndarray, schema: FeatureSchema,
                      scm: Scm, nodes: Sequence[str] | None = None) -> float:
    """Mean over CFs of the summed per-edge log-likelihood ratios
    log p(cf_v | cf parents) / log p(x_v | x parents)."""
    if nodes is None:
        nodes = [v for v in scm.endogenous if v != scm.outcome]
    flat, n, k = _flat(cfs)
    raw_cf = decode(schema, flat).to_dict("records")
    raw_x = decode(schema, np.asarray(X, dtype=np.float64)).to_dict("records")
    total = 0.0
    used = 0
    skipped = 0
    for i in range(n):
        base = {v: scm.edge_log_likelihood(v, raw_x[i]) for v in nodes}
        if any(b == 0.0 for b in base.values()):
            skipped += k
            continue
        for j in range(k):
            row = raw_cf[i * k + j]
            total += sum(scm.edge_log_likelihood(v, row) / base[v] for v in nodes)
            used += 1
    if skipped:
        log.warning("causal-edge score skipped %d CFs with zero base log-likelihood",
                    skipped)
    if used == 0:
        raise ConfigurationError("no scorable rows for the causal-edge metric")
    return total / used


# -- interpretability (autoencoder) metrics ------------------------------------------

ENCODER_HIDDEN = (20, 16, 14, 12)


@dataclass
class Autoencoder:
    spec: MlpSpec
    params: list[Tensor]

    def reconstruct(self, X: np.ndarray) -> np.ndarray:
        return mlp_eval(self.spec, self.params, np.atleast_2d(X))


@dataclass
class AeTrainConfig:
    epochs: int = 20
    batch_size: int = 64
    lr: float = 1e-3
    seed: int = 0


def _ae_spec(d: int, latent_dim: int = 10) -> MlpSpec:
    hidden = ENCODER_HIDDEN
    widths = (d,) + hidden + (latent_dim,) + tuple(reversed(hidden)) + (d,)
    acts = ("relu",) * len(hidden) + ("identity",) + ("relu",) * len(hidden) + ("sigmoid",)
    drop = (0.1,) * len(hidden) + (0.0,) + (0.1,) * len(hidden) + (0.0,)
    return MlpSpec(widths, acts, drop)


def train_autoencoder(X: np.ndarray, config: AeTrainConfig) -> Autoencoder:
    """Squared-error reconstruction training (same stacks as the generator,
    no class conditioning)."""
    X = np.asarray(X, dtype=np.float64)
    spec = _ae_spec(X.shape[1])
    rng = np.random.default_rng(config.seed)
    params = init_params(spec, rng)
    opt = sgd(config.lr)
    n = len(X)
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            tape = Tape()
            pvars = [tape.leaf(p.data) for p in params]
            x_const = tape.const(X[idx])
            out = forward_var(tape, spec, pvars, x_const, training=True, rng=rng)
            loss = (x_const - out).square().sum(axis=1).mean()
            tape.backward(loss)
            step(opt, params, [tape.grad(v) for v in pvars])
    return Autoencoder(spec=spec, params=params)


@dataclass
class AeSet:
    """One autoencoder per class plus one trained on every class."""

    per_class: dict[int, Autoencoder]
    all_classes: Autoencoder


def train_autoencoders(X: np.ndarray, y: np.ndarray,
                       config: AeTrainConfig | None = None) -> AeSet:
    config = config or AeTrainConfig()
    per_class = {}
    for c in sorted(np.unique(y)):
        per_class[int(c)] = train_autoencoder(X[y == c], config)
    return AeSet(per_class=per_class, all_classes=train_autoencoder(X, config))


def _recon_per_input(ae, n: int, flat: np.ndarray, k: int) -> np.ndarray:
    """Reconstructions under a single AE or a per-input sequence of AEs."""
    if isinstance(ae, Autoencoder):
        return ae.reconstruct(flat)
    out = np.empty_like(flat)
    for i, a in enumerate(ae):
        out[i * k:(i + 1) * k] = a.reconstruct(flat[i * k:(i + 1) * k])
    return out


def im1(cfs: np.ndarray, ae_target, ae_original) -> float:
    """Mean ||cf - AE_target(cf)|| / ||cf - AE_original(cf)||; lower is better."""
    flat, n, k = _flat(cfs)
    rt = _recon_per_input(ae_target, n, flat, k)
    ro = _recon_per_input(ae_original, n, flat, k)
    num = np.linalg.norm(flat - rt, axis=1)
    den = np.linalg.norm(flat - ro, axis=1)
    ok = den > 0.0
    if not ok.all():
        log.warning("im1 skipped %d CFs with zero denominator", int((~ok).sum()))
    if not ok.any():
        raise ConfigurationError("im1 has no scorable rows")
    return float(np.mean(num[ok] / den[ok]))


def im2(cfs: np.ndarray, ae_target, ae_all) -> float:
    """Mean ||AE_all(cf) - AE_target(cf)|| / ||cf||; lower is better."""
    flat, n, k = _flat(cfs)
    rt = _recon_per_input(ae_target, n, flat, k)
    ra = _recon_per_input(ae_all, n, flat, k)
    num = np.linalg.norm(ra - rt, axis=1)
    den = np.linalg.norm(flat, axis=1)
    ok = den > 0.0
    if not ok.all():
        log.warning("im2 skipped %d CFs with zero norm", int((~ok).sum()))
    if not ok.any():
        raise ConfigurationError("im2 has no scorable rows")
    return float(np.mean(num[ok] / den[ok]))


# -- one-call report -------------------------------------------------------------------

def compute_report(classifier: ClassifierModel, schema: FeatureSchema,
                   X: np.ndarray, cfs: np.ndarray, y_target: np.ndarray,
                   mads: MadStats,
                   constraint: OracleSpec | None = None,
                   scm: Scm | None = None,
                   aes: AeSet | None = None) -> MetricsReport:
    flat, n, k = _flat(cfs)
    im1_v = im2_v = None
    if aes is not None:
        y_orig = 1 - np.asarray(y_target, dtype=np.int64)
        ae_t = [aes.per_class[int(c)] for c in y_target]
        ae_o = [aes.per_class[int(c)] for c in y_orig]
        im1_v = im1(cfs, ae_t, ae_o)
        im2_v = im2(cfs, ae_t, aes.all_classes)
    return MetricsReport(
        validity=target_class_validity(classifier, cfs, y_target),
        cont_proximity=cont_proximity(cfs, X, mads, schema),
        cat_proximity=cat_proximity(cfs, X, schema),
        constraint_feasibility=(constraint_feasibility(cfs, X, schema, constraint)
                                if constraint is not None else None),
        causal_edge=(causal_edge_score(cfs, X, schema, scm) if scm is not None else None),
        im1=im1_v,
        im2=im2_v,
        n_inputs=n,
        k_per_input=k,
    )
