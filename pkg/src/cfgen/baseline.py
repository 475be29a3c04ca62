"""Per-instance counterfactual search by gradient descent.

Minimizes classification loss toward the target class plus a pluggable
distance term (plain L1 or causal proximity), starting from the input
itself. Continuous dimensions stay clipped to [0, 1]; categorical one-hot
blocks are relaxed to the probability simplex during the search and decoded
by argmax afterwards. Returns the valid iterate with the smallest distance
term (earliest on ties), or the final iterate flagged invalid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .classifier import ClassifierModel, class_scores, scores_var
from .data import FeatureSchema
from .errors import ConfigurationError, NumericError
from .feasibility import CausalProximityConfig, dist_causal_total
from .nn import Tape

@dataclass
class InstanceOptConfig:
    distance: str = "l1"  # "l1" | "causal"
    distance_weight: float = 1.0
    max_iterations: int = 200
    lr: float = 0.05
    tolerance: float = 1e-9
    seed: int = 0
    causal_config: CausalProximityConfig | None = None

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ConfigurationError("max_iterations must be >= 1")
        if self.distance not in ("l1", "causal"):
            raise ConfigurationError(f"unknown distance {self.distance!r}")
        if self.distance == "causal" and self.causal_config is None:
            raise ConfigurationError("causal distance needs a causal_config")


@dataclass
class OptTrace:
    iterations: int
    losses: list[float] = field(default_factory=list)
    valid: bool = False
    best_iteration: int | None = None


def _project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    rho = np.nonzero(u * np.arange(1, v.size + 1) > css)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def _project(x: np.ndarray, schema: FeatureSchema | None) -> np.ndarray:
    if schema is None:
        return np.clip(x, 0.0, 1.0)
    out = x.copy()
    slices = schema.block_slices()
    for c in schema.continuous:
        out[slices[c.name]] = np.clip(out[slices[c.name]], 0.0, 1.0)
    for c in schema.categorical:
        out[slices[c.name]] = _project_simplex(out[slices[c.name]])
    return out


def _distance_value(x: np.ndarray, x_cf: np.ndarray,
                    config: InstanceOptConfig) -> float:
    if config.distance == "l1":
        return float(np.abs(x_cf - x).sum())
    return float(dist_causal_total(x, x_cf, config.causal_config))


def optimize_cf(classifier: ClassifierModel, x: np.ndarray, y_target: int,
                config: InstanceOptConfig,
                schema: FeatureSchema | None = None
                ) -> tuple[np.ndarray, OptTrace]:
    """One counterfactual for one encoded input row."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y_target = int(y_target)
    pred = int(np.argmax(class_scores(classifier, x)))
    if pred == y_target:
        return x.copy(), OptTrace(iterations=0, valid=True, best_iteration=0)

    x_cf = x.copy()
    trace = OptTrace(iterations=0)
    best: tuple[float, int, np.ndarray] | None = None
    prev_loss = None
    causal = config.causal_config
    for it in range(1, config.max_iterations + 1):
        tape = Tape()
        cf_var = tape.leaf(x_cf.reshape(1, -1))
        scores = scores_var(tape, classifier, cf_var)
        ce = -scores.take_per_row(np.array([y_target])).log().sum()
        if config.distance == "l1":
            dist = (cf_var - tape.const(x.reshape(1, -1))).abs().sum()
        else:
            from .feasibility import causal_dist_builder
            dist = causal_dist_builder(causal)(tape, tape.const(x.reshape(1, -1)), cf_var).sum()
        loss = ce + dist * config.distance_weight
        tape.backward(loss)
        g = tape.grad(cf_var).reshape(-1)
        x_cf = x_cf - config.lr * g
        if not np.all(np.isfinite(x_cf)):
            raise NumericError(f"non-finite iterate at iteration {it}")
        x_cf = _project(x_cf, schema)
        trace.iterations = it
        trace.losses.append(float(loss.value))
        if int(np.argmax(class_scores(classifier, x_cf))) == y_target:
            d = _distance_value(x, x_cf, config)
            if best is None or d < best[0]:
                best = (d, it, x_cf.copy())
        if prev_loss is not None and abs(prev_loss - float(loss.value)) < config.tolerance:
            break
        prev_loss = float(loss.value)
    if best is not None:
        trace.valid = True
        trace.best_iteration = best[1]
        return best[2], trace
    return x_cf, trace


def optimize_batch(classifier: ClassifierModel, X: np.ndarray,
                   y_target: np.ndarray, config: InstanceOptConfig,
                   schema: FeatureSchema | None = None) -> np.ndarray:
    """Independent per-row searches; returns (n, 1, d) to match generator output."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    out = np.empty_like(X)
    for i in range(len(X)):
        out[i], _ = optimize_cf(classifier, X[i], int(np.asarray(y_target).reshape(-1)[i]),
                                config, schema)
    return out[:, None, :]
