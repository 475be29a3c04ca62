"""SGD and Adam parameter updates."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DimensionError, NumericError
from .layers import Tensor


@dataclass
class OptimizerState:
    kind: str  # "sgd" | "adam"
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] | None = field(default=None, repr=False)
    v: list[np.ndarray] | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.kind!r}")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")


def sgd(lr: float) -> OptimizerState:
    return OptimizerState(kind="sgd", lr=lr)


def adam(lr: float) -> OptimizerState:
    return OptimizerState(kind="adam", lr=lr)


def step(state: OptimizerState, params: list[Tensor],
         grads: list[np.ndarray]) -> tuple[list[Tensor], OptimizerState]:
    """One update in place; returns (params, state) for chaining."""
    if len(params) != len(grads):
        raise DimensionError(f"{len(params)} params but {len(grads)} gradients")
    for i, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.shape:
            raise DimensionError(
                f"parameter {i}: gradient shape {g.shape} != {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(
                f"gradient for parameter {i} is not finite; training aborted")
    if state.kind == "sgd":
        for p, g in zip(params, grads):
            p.data -= state.lr * g
        return params, state
    if state.m is None:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state
