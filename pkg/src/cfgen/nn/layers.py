"""Dense tensors, MLP specs, and the forward pass.

Layer stack per layer i: affine -> (inverted dropout, training only) -> activation.
Dropout masks scale by 1/(1-rate) at train time so inference needs no rescaling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from ..errors import DimensionError, NumericError
from .tape import Tape, Var

ACTIVATIONS = ("identity", "relu", "sigmoid")


@dataclass
class Tensor:
    """Dense float64 array; flat values are row-major."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if not np.all(np.isfinite(self.data)):
            raise NumericError("tensor contains non-finite values")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def values(self) -> np.ndarray:
        return self.data.reshape(-1)


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths plus per-layer activation and dropout rate."""

    widths: tuple[int, ...]
    activations: tuple[str, ...]
    dropout: tuple[float, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        acts = tuple(self.activations)
        drops = tuple(self.dropout) if self.dropout else (0.0,) * (len(self.widths) - 1)
        object.__setattr__(self, "activations", acts)
        object.__setattr__(self, "dropout", drops)
        if len(self.widths) < 2:
            raise DimensionError("an MLP needs at least input and output widths")
        if any(w <= 0 for w in self.widths):
            raise DimensionError("layer widths must be positive")
        if len(acts) != self.n_layers or len(drops) != self.n_layers:
            raise DimensionError(
                f"need {self.n_layers} activations/dropout rates for widths {self.widths}")
        for a in acts:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        for r in drops:
            if not 0.0 <= r < 1.0:
                raise ValueError(f"dropout rate {r} outside [0, 1)")

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1


def init_params(spec: MlpSpec, rng: np.random.Generator) -> list[Tensor]:
    """Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)] for weights and biases."""
    params: list[Tensor] = []
    for i in range(spec.n_layers):
        fan_in, fan_out = spec.widths[i], spec.widths[i + 1]
        bound = 1.0 / np.sqrt(fan_in)
        params.append(Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out))))
        params.append(Tensor(rng.uniform(-bound, bound, size=(fan_out,))))
    return params


def _check_params(spec: MlpSpec, params) -> None:
    if len(params) != 2 * spec.n_layers:
        raise DimensionError(
            f"expected {2 * spec.n_layers} parameter tensors, got {len(params)}")
    for i in range(spec.n_layers):
        w, b = params[2 * i], params[2 * i + 1]
        wshape = w.shape if hasattr(w, "shape") else np.shape(w)
        if tuple(wshape) != (spec.widths[i], spec.widths[i + 1]):
            raise DimensionError(
                f"layer {i}: weight shape {tuple(wshape)} != {(spec.widths[i], spec.widths[i + 1])}")


def forward_var(tape: Tape, spec: MlpSpec, param_vars: list[Var], x: Var,
                training: bool = False, rng: np.random.Generator | None = None) -> Var:
    """Forward pass on an existing tape; `x` is (n, width_in)."""
    if x.value.ndim != 2 or x.shape[1] != spec.widths[0]:
        raise DimensionError(
            f"layer 0: input width {x.shape} does not match spec width {spec.widths[0]}")
    h = x
    for i in range(spec.n_layers):
        w, b = param_vars[2 * i], param_vars[2 * i + 1]
        h = h @ w + b
        rate = spec.dropout[i]
        if training and rate > 0.0:
            if rng is None:
                raise ValueError("training with dropout needs an rng")
            mask = (rng.random(h.shape) >= rate) / (1.0 - rate)
            h = h * tape.const(mask)
        act = spec.activations[i]
        if act == "relu":
            h = h.relu()
        elif act == "sigmoid":
            h = h.sigmoid()
    return h


def forward(spec: MlpSpec, params: list[Tensor], input: Tensor,
            training: bool = False, rng: np.random.Generator | None = None
            ) -> tuple[Tensor, Tape]:
    """Standalone forward pass; returns the output and the recording tape."""
    _check_params(spec, params)
    tape = Tape()
    pvars = [tape.leaf(p.data) for p in params]
    x = input.data
    if x.ndim == 1:
        x = x.reshape(1, -1)
    out = forward_var(tape, spec, pvars, tape.const(x), training=training, rng=rng)
    return Tensor(out.value), tape


def mlp_eval(spec: MlpSpec, params: list[Tensor], x: np.ndarray) -> np.ndarray:
    """Tape-free inference path; bit-identical to forward(training=False)."""
    _check_params(spec, params)
    h = np.asarray(x, dtype=np.float64)
    squeeze = h.ndim == 1
    if squeeze:
        h = h.reshape(1, -1)
    if h.shape[1] != spec.widths[0]:
        raise DimensionError(
            f"layer 0: input width {h.shape[1]} does not match spec width {spec.widths[0]}")
    for i in range(spec.n_layers):
        h = h @ params[2 * i].data + params[2 * i + 1].data
        act = spec.activations[i]
        if act == "relu":
            h = np.maximum(h, 0.0)
        elif act == "sigmoid":
            h = expit(h)
    return h[0] if squeeze else h
