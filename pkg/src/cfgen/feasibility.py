"""Feasibility-aware proximity terms.

Two routes to the same goal:

- causal proximity: endogenous features are scored against what their
  counterfactual parents predict through the causal mechanism, instead of
  against the original value; exogenous features keep the plain L1 term.
- explicit constraints: unary direction hinges and fitted linear monotonic
  penalties, added on top of the base loss.

Residuals are computed on scaled features so weights are comparable across
features; mechanism predictions are evaluated in raw units and scaled back.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .classifier import ClassifierModel
from .data import FeatureSchema, rank_scores
from .errors import ConfigurationError, DegenerateFitError, StateError
from .nn import Tape
from .nn.tape import Var
from .scm import Scm
from .vae import CfVae, VaeTrainConfig, train_with


# -- causal proximity -----------------------------------------------------------

@dataclass(frozen=True)
class CausalProximityConfig:
    """Partition of features into exogenous (plain L1) and endogenous
    (mechanism residual) sets, plus the endogenous weight."""

    scm: Scm
    schema: FeatureSchema
    endogenous: tuple[str, ...]
    weight: float

    def __post_init__(self):
        names = {c.name for c in self.schema.columns}
        for v in self.endogenous:
            if v not in names:
                raise ConfigurationError(f"endogenous feature {v!r} not in schema")
            if not self.scm.parents.get(v):
                raise ConfigurationError(f"endogenous feature {v!r} has no mechanism")
            for p in self.scm.parents[v]:
                if p not in names:
                    raise ConfigurationError(
                        f"mechanism for {v!r} consumes unmodeled feature {p!r}")
        if self.weight <= 0:
            raise ConfigurationError("endogenous weight must be positive")

    @property
    def exogenous(self) -> list[str]:
        vs = set(self.endogenous)
        return [c.name for c in self.schema.columns if c.name not in vs]


def causal_config_from_scm(scm: Scm, schema: FeatureSchema, weight: float
                           ) -> CausalProximityConfig:
    """Endogenous set = every non-outcome node with parents."""
    vs = tuple(v for v in scm.endogenous if v != scm.outcome)
    return CausalProximityConfig(scm=scm, schema=schema, endogenous=vs, weight=weight)


def _scale_bounds(schema: FeatureSchema, name: str) -> tuple[float, float]:
    c = schema.column(name)
    if c.kind != "continuous":
        raise ConfigurationError(f"feature {name!r} must be continuous here")
    return c.min, c.max - c.min


def _col(schema: FeatureSchema, name: str):
    sl = schema.block_slices()[name]
    if sl.stop - sl.start != 1:
        raise ConfigurationError(f"feature {name!r} is not a single encoded column")
    return sl.start


def _abs(v):
    return v.abs() if isinstance(v, Var) else np.abs(v)


def _node_residual(x_cf, v: str, config: CausalProximityConfig):
    """Scaled |cf value - scaled mechanism prediction of cf parents|.

    `x_cf` is an encoded (n, d) matrix or Var; works on both because the
    mechanism only uses +, *, and scalars.
    """
    schema = config.schema
    parent_raw = []
    for p in config.scm.parents[v]:
        lo, width = _scale_bounds(schema, p)
        col = x_cf[:, _col(schema, p)] if isinstance(x_cf, np.ndarray) \
            else x_cf.cols(slice(_col(schema, p), _col(schema, p) + 1))
        parent_raw.append(lo + col * width)
    pred_raw = config.scm.mechanisms[v].expectation(parent_raw)
    lo_v, width_v = _scale_bounds(schema, v)
    pred_scaled = (pred_raw - lo_v) * (1.0 / width_v)
    v_scaled = x_cf[:, _col(schema, v)] if isinstance(x_cf, np.ndarray) \
        else x_cf.cols(slice(_col(schema, v), _col(schema, v) + 1))
    if isinstance(x_cf, np.ndarray):
        pred_scaled = pred_scaled.reshape(len(x_cf))
        return _abs(v_scaled - pred_scaled)
    return _abs(v_scaled - pred_scaled).reshape(-1)


def dist_causal_node(v: str, x_cf: np.ndarray, config: CausalProximityConfig):
    """Residual of one endogenous feature; only counterfactual values enter."""
    if v not in config.endogenous:
        raise ConfigurationError(f"{v!r} is not in the endogenous set")
    X = np.atleast_2d(np.asarray(x_cf, dtype=np.float64))
    out = _node_residual(X, v, config)
    return float(out[0]) if np.ndim(x_cf) == 1 else out


def dist_causal_total(x: np.ndarray, x_cf: np.ndarray,
                      config: CausalProximityConfig):
    """Exogenous L1 + weight * endogenous residual sum, per row (scaled units)."""
    X = np.atleast_2d(np.asarray(x, dtype=np.float64))
    Xcf = np.atleast_2d(np.asarray(x_cf, dtype=np.float64))
    slices = config.schema.block_slices()
    total = np.zeros(len(X))
    for u in config.exogenous:
        total = total + np.abs(Xcf[:, slices[u]] - X[:, slices[u]]).sum(axis=1)
    endo = np.zeros(len(X))
    for v in config.endogenous:
        endo = endo + _node_residual(Xcf, v, config)
    total = total + config.weight * endo
    return float(total[0]) if np.ndim(x) == 1 else total


def dist_causal_total_relative(x: np.ndarray, x_cf: np.ndarray,
                               config: CausalProximityConfig):
    """Equivalent form: the endogenous residual as the gap between the realized
    change (against the mechanism's prediction for the original parents) and
    the mechanism-predicted change. Algebraically identical to
    dist_causal_total; kept as an independent code path for verification."""
    X = np.atleast_2d(np.asarray(x, dtype=np.float64))
    Xcf = np.atleast_2d(np.asarray(x_cf, dtype=np.float64))
    schema = config.schema
    slices = schema.block_slices()
    total = np.zeros(len(X))
    for u in config.exogenous:
        total = total + np.abs(Xcf[:, slices[u]] - X[:, slices[u]]).sum(axis=1)
    endo = np.zeros(len(X))
    for v in config.endogenous:
        lo_v, width_v = _scale_bounds(schema, v)

        def pred_scaled(mat):
            raw = [schema.column(p).min +
                   mat[:, _col(schema, p)] * (schema.column(p).max - schema.column(p).min)
                   for p in config.scm.parents[v]]
            return (config.scm.mechanisms[v].expectation(raw) - lo_v) / width_v

        base = pred_scaled(X)
        realized = Xcf[:, _col(schema, v)] - base
        predicted = pred_scaled(Xcf) - base
        endo = endo + np.abs(realized - predicted)
    total = total + config.weight * endo
    return float(total[0]) if np.ndim(x) == 1 else total


def causal_dist_builder(config: CausalProximityConfig):
    """Drop-in replacement for the generator's L1 dist term."""
    schema = config.schema
    slices = schema.block_slices()
    exo = config.exogenous

    def build(tape: Tape, x_const: Var, x_cf: Var) -> Var:
        rows = None
        for u in exo:
            term = (x_cf.cols(slices[u]) - x_const.cols(slices[u])).abs().sum(axis=1)
            rows = term if rows is None else rows + term
        endo = None
        for v in config.endogenous:
            r = _node_residual(x_cf, v, config)
            endo = r if endo is None else endo + r
        if endo is not None:
            endo = endo * config.weight
            rows = endo if rows is None else rows + endo
        return rows

    return build


# -- unary and binary constraints -------------------------------------------------

@dataclass(frozen=True)
class UnaryConstraint:
    feature: str
    direction: str  # "non-decrease" | "non-increase"

    def __post_init__(self):
        if self.direction not in ("non-decrease", "non-increase"):
            raise ConfigurationError(f"unknown direction {self.direction!r}")


def unary_hinge(x_row, cf_row, c: UnaryConstraint,
                schema: FeatureSchema | None = None) -> float:
    """Directional hinge on raw values (continuous) or rank scores (categorical)."""
    if schema is not None and schema.column(c.feature).kind == "categorical":
        xv = float(rank_scores(schema, c.feature, [x_row[c.feature]])[0])
        cv = float(rank_scores(schema, c.feature, [cf_row[c.feature]])[0])
    else:
        xv, cv = float(x_row[c.feature]), float(cf_row[c.feature])
    delta = cv - xv
    if c.direction == "non-decrease":
        return float(max(0.0, -delta))
    return float(max(0.0, delta))


@dataclass
class MonotonicConstraint:
    cause: str
    effect: str
    sign: str  # "increasing" | "decreasing"
    intercept: float | None = None
    slope: float | None = None

    def __post_init__(self):
        if self.sign not in ("increasing", "decreasing"):
            raise ConfigurationError(f"unknown sign {self.sign!r}")

    @property
    def fitted(self) -> bool:
        return self.slope is not None


def fit_monotonic_linear(df: pd.DataFrame, cause: str, effect: str,
                         sign: str = "increasing") -> MonotonicConstraint:
    """Least squares effect = a + b*cause in raw units, with the slope projected
    onto the declared sign (the constrained optimum sits at b = 0 when the
    unconstrained slope has the wrong sign)."""
    x = pd.to_numeric(df[cause]).to_numpy(dtype=np.float64)
    y = pd.to_numeric(df[effect]).to_numpy(dtype=np.float64)
    if np.unique(x).size < 2:
        raise DegenerateFitError(f"cause {cause!r} is constant; no slope is identified")
    xm, ym = x.mean(), y.mean()
    b = float(((x - xm) * (y - ym)).sum() / ((x - xm) ** 2).sum())
    if (sign == "increasing" and b < 0.0) or (sign == "decreasing" and b > 0.0):
        b = 0.0
    a = float(ym - b * xm)
    return MonotonicConstraint(cause=cause, effect=effect, sign=sign,
                               intercept=a, slope=b)


def monotonic_penalty(x_row, cf_row, c: MonotonicConstraint,
                      schema: FeatureSchema) -> float:
    """|scaled cf effect - scaled fitted prediction of the cf cause|."""
    if not c.fitted:
        raise StateError("monotonic constraint must be fitted before use")
    cause_raw = float(cf_row[c.cause])
    pred_raw = c.intercept + c.slope * cause_raw
    lo, width = _scale_bounds(schema, c.effect)
    return float(abs((float(cf_row[c.effect]) - lo) / width - (pred_raw - lo) / width))


def constraint_penalty_builder(constraints: Sequence, weights,
                               schema: FeatureSchema):
    """Weighted sum of constraint penalty means, as a tape builder.

    Unary hinges run on scaled values (continuous) or rank scores
    (categorical); monotonic penalties on scaled effect residuals.
    """
    cs = list(constraints)
    if np.ndim(weights) == 0:
        ws = [float(weights)] * len(cs)
    else:
        ws = [float(w) for w in weights]
    if len(ws) != len(cs):
        raise ConfigurationError("one weight per constraint required")
    slices = schema.block_slices()

    def build(tape: Tape, x_const: Var, x_cf: Var) -> Var:
        total = tape.const(0.0)
        for c, w in zip(cs, ws):
            if w == 0.0:
                continue
            if isinstance(c, UnaryConstraint):
                col = schema.column(c.feature)
                if col.kind == "categorical":
                    ranks = tape.const(np.asarray(col.ranks, dtype=np.float64).reshape(-1, 1))
                    score_cf = (x_cf.cols(slices[c.feature]) @ ranks).reshape(-1)
                    score_x = (x_const.cols(slices[c.feature]) @ ranks).reshape(-1)
                else:
                    score_cf = x_cf.cols(slices[c.feature]).reshape(-1)
                    score_x = x_const.cols(slices[c.feature]).reshape(-1)
                delta = score_cf - score_x
                pen = (-delta).relu() if c.direction == "non-decrease" else delta.relu()
            elif isinstance(c, MonotonicConstraint):
                if not c.fitted:
                    raise StateError("monotonic constraint must be fitted before use")
                lo_c, width_c = _scale_bounds(schema, c.cause)
                lo_e, width_e = _scale_bounds(schema, c.effect)
                cause_raw = x_cf.cols(slices[c.cause]).reshape(-1) * width_c + lo_c
                pred_scaled = (cause_raw * c.slope + c.intercept - lo_e) * (1.0 / width_e)
                eff = x_cf.cols(slices[c.effect]).reshape(-1)
                pen = (eff - pred_scaled).abs()
            else:
                raise ConfigurationError(f"unknown constraint type {type(c).__name__}")
            total = total + pen.mean() * w
        return total

    return build


# -- training entry points ---------------------------------------------------------

def train_model_based(vae: CfVae, X_train: np.ndarray, classifier: ClassifierModel,
                      config: VaeTrainConfig,
                      causal_config: CausalProximityConfig) -> CfVae:
    """Base generator loss with the dist term replaced by causal proximity."""
    return train_with(vae, X_train, classifier, config,
                      dist_builder=causal_dist_builder(causal_config))


def train_model_approx(vae: CfVae, X_train: np.ndarray, classifier: ClassifierModel,
                       config: VaeTrainConfig, penalties: Sequence,
                       weights) -> CfVae:
    """Base generator loss plus weighted unary/monotonic constraint penalties."""
    builder = constraint_penalty_builder(penalties, weights, vae.schema)
    return train_with(vae, X_train, classifier, config, penalty_builder=builder)


# -- constraint files ---------------------------------------------------------------

def load_constraints(path: str | Path, df: pd.DataFrame | None = None) -> dict:
    """Read a constraint declaration file.

    Format: {"unary": [{"feature", "direction"}...],
             "monotonic": [{"cause", "effect", "sign"}...],
             "weight": float or [floats]}.
    Monotonic entries are fitted on `df` when provided.
    """
    cfg = json.loads(Path(path).read_text())
    unary = [UnaryConstraint(d["feature"], d["direction"])
             for d in cfg.get("unary", [])]
    mono = []
    for d in cfg.get("monotonic", []):
        c = MonotonicConstraint(d["cause"], d["effect"], d.get("sign", "increasing"))
        if df is not None:
            c = fit_monotonic_linear(df, c.cause, c.effect, c.sign)
        mono.append(c)
    return {"unary": unary, "monotonic": mono, "weight": cfg.get("weight", 1.0)}
