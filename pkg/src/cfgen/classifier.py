"""The fixed model under explanation: a two-layer MLP trained with cross-entropy.

ReLU sits on the first hidden layer only; the second layer is linear and
softmax happens in the loss / scoring path. The trained model is immutable:
counterfactual training asserts its parameter hash never moves.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .data import FeatureSchema
from .errors import ConfigurationError
from .nn import (MlpSpec, Tape, Tensor, adam, init_params, mlp_eval,
                 params_hash, step)
from .nn.layers import forward_var
from .nn.tape import Var, softmax

log = logging.getLogger(__name__)


@dataclass
class ClassifierConfig:
    epochs: int = 100
    batch_size: int = 32
    lr: float = 1e-3
    hidden_dim: int = 10
    seed: int = 0


@dataclass
class ClassifierModel:
    spec: MlpSpec
    params: list[Tensor]
    schema: FeatureSchema | None
    n_classes: int
    history: list[float] = field(default_factory=list, repr=False)

    def hash(self) -> str:
        return params_hash(self.params)


def train_classifier(X_train: np.ndarray, y_train: np.ndarray,
                     X_val: np.ndarray, y_val: np.ndarray,
                     config: ClassifierConfig,
                     schema: FeatureSchema | None = None) -> ClassifierModel:
    classes = np.unique(y_train)
    if classes.size < 2:
        raise ConfigurationError("training data contains a single class")
    n_classes = int(classes.max()) + 1
    d = X_train.shape[1]
    spec = MlpSpec((d, config.hidden_dim, n_classes), ("relu", "identity"))
    rng = np.random.default_rng(config.seed)
    params = init_params(spec, rng)
    opt = adam(config.lr)
    model = ClassifierModel(spec=spec, params=params, schema=schema, n_classes=n_classes)
    n = len(X_train)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            tape = Tape()
            pvars = [tape.leaf(p.data) for p in params]
            logits = forward_var(tape, spec, pvars, tape.const(X_train[idx]))
            logp = logits - logits.logsumexp(axis=1, keepdims=True)
            loss = -logp.take_per_row(y_train[idx]).mean()
            tape.backward(loss)
            step(opt, params, [tape.grad(p) for p in pvars])
        acc = float(np.mean(predict_class(model, X_val) == y_val))
        model.history.append(acc)
        log.info("epoch %3d  val accuracy %.4f", epoch + 1, acc)
    return model


def class_scores(model: ClassifierModel, X: np.ndarray) -> np.ndarray:
    """Softmax probabilities, rows summing to 1."""
    logits = mlp_eval(model.spec, model.params, X)
    single = logits.ndim == 1
    if single:
        logits = logits.reshape(1, -1)
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    return p[0] if single else p


def predict_class(model: ClassifierModel, X: np.ndarray) -> np.ndarray:
    """Argmax class; ties resolve to the lowest index."""
    s = class_scores(model, X)
    if s.ndim == 1:
        return int(np.argmax(s))
    return np.argmax(s, axis=1)


def scores_var(tape: Tape, model: ClassifierModel, x: Var) -> Var:
    """Differentiable softmax scores with the classifier as constants."""
    pvars = [tape.const(p.data) for p in model.params]
    logits = forward_var(tape, model.spec, pvars, x)
    return softmax(logits)
