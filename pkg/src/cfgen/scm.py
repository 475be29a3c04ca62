"""Structural causal models: construction, sampling, and edge likelihoods.

An Scm is a DAG of named nodes, each with one mechanism. Source nodes (no
parents) form the exogenous set U; the rest form the endogenous set V.
Sampling walks nodes in a canonical topological order (ties broken by node
name), so the declaration order never affects the drawn values.

Mechanism kinds and their parameters:

- ``truncated-normal``      loc, scale; source only; rejection-sampled at 0 so
                            values are strictly positive
- ``linear-gaussian``       coeffs (one per parent, in parent order),
                            intercept, noise_std; zero parents = plain Gaussian
- ``quadratic-sum-gaussian``  scale*(sum of parents)^2 + intercept, noise_std
- ``bernoulli-sigmoid``     logit = intercept + coeffs.parents
                            + product_coeff * prod(product_parents); binary
                            outcome. ``sample_mode`` selects how the label is
                            realized: "threshold" (default) takes the most
                            likely label, "bernoulli" draws it. At the stock
                            benchmark parameters the drawn variant caps any
                            classifier near 61% accuracy, so thresholding is
                            the default.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import pandas as pd

from .errors import ConfigurationError, CfgenError

_GAUSSIAN_KINDS = ("linear-gaussian", "quadratic-sum-gaussian")
_KINDS = ("truncated-normal",) + _GAUSSIAN_KINDS + ("bernoulli-sigmoid",)


class NoParentsError(CfgenError):
    """Conditional quantity requested for a source (exogenous) node."""


class UnsupportedNodeError(CfgenError):
    """Edge likelihood requested for a node without a Gaussian noise model."""


def _sigmoid(x):
    if hasattr(x, "sigmoid"):
        return x.sigmoid()
    from scipy.special import expit
    return expit(np.asarray(x, dtype=np.float64))


@dataclass(frozen=True)
class Mechanism:
    kind: str
    params: dict[str, Any]

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ConfigurationError(f"unknown mechanism kind {self.kind!r}")
        p = self.params
        if self.kind == "truncated-normal":
            if p.get("scale", 0.0) <= 0:
                raise ConfigurationError("truncated-normal scale must be > 0")
        elif self.kind in _GAUSSIAN_KINDS:
            if p.get("noise_std", 0.0) <= 0:
                raise ConfigurationError(f"{self.kind} noise_std must be > 0")

    def expectation(self, parent_values: Sequence):
        """Noise-free structural value given parent values (in parent order).

        Works on floats, numpy arrays, and autodiff Vars alike: only +, *,
        and sigmoid are used.
        """
        p = self.params
        if self.kind == "truncated-normal":
            raise NoParentsError("source nodes have no conditional expectation")
        if self.kind == "linear-gaussian":
            out = p["intercept"]
            for c, v in zip(p["coeffs"], parent_values):
                out = out + c * v
            return out
        if self.kind == "quadratic-sum-gaussian":
            s = parent_values[0]
            for v in parent_values[1:]:
                s = s + v
            return p["scale"] * (s * s) + p["intercept"]
        # bernoulli-sigmoid: expectation is the success probability
        logit = p["intercept"]
        for c, v in zip(p.get("coeffs", []), parent_values):
            logit = logit + c * v
        if p.get("product_coeff"):
            prod = parent_values[p["product_index"][0]]
            for i in p["product_index"][1:]:
                prod = prod * parent_values[i]
            logit = logit + p["product_coeff"] * prod
        return _sigmoid(logit)


@dataclass(frozen=True)
class SimpleBnParams:
    mu1: float = 50.0
    mu2: float = 50.0
    sigma1: float = 15.0
    sigma2: float = 17.0
    sigma3: float = 0.5
    k1: float = 0.0003
    k2: float = 0.0013
    b1: float = 10.0
    b2: float = 10.0

    def __post_init__(self):
        for name in ("sigma1", "sigma2", "sigma3", "k1", "k2", "b1", "b2"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"SimpleBnParams.{name} must be > 0")


def simple_bn_default() -> SimpleBnParams:
    """The hand-crafted three-feature benchmark parameter set."""
    return SimpleBnParams()


class Scm:
    """Directed acyclic causal graph with one mechanism per node."""

    def __init__(self, nodes: Sequence[str], parents: dict[str, Sequence[str]],
                 mechanisms: dict[str, Mechanism]):
        self.nodes = list(nodes)
        self.parents = {n: tuple(parents.get(n, ())) for n in self.nodes}
        self.mechanisms = dict(mechanisms)
        self._validate()
        self.topo_order = self._canonical_topological_order()

    def _validate(self) -> None:
        known = set(self.nodes)
        if len(known) != len(self.nodes):
            raise ConfigurationError("duplicate node names")
        for n in self.nodes:
            if n not in self.mechanisms:
                raise ConfigurationError(f"node {n!r} has no mechanism")
            for p in self.parents[n]:
                if p not in known:
                    raise ConfigurationError(f"node {n!r} has unknown parent {p!r}")
            mech = self.mechanisms[n]
            if mech.kind == "truncated-normal" and self.parents[n]:
                raise ConfigurationError(
                    f"node {n!r}: truncated-normal is a source mechanism but parents were given")
            if mech.kind == "linear-gaussian":
                if len(mech.params["coeffs"]) != len(self.parents[n]):
                    raise ConfigurationError(
                        f"node {n!r}: {len(mech.params['coeffs'])} coefficients for "
                        f"{len(self.parents[n])} parents")
            if not self.parents[n] and mech.kind == "quadratic-sum-gaussian":
                raise ConfigurationError(f"node {n!r}: quadratic mechanism needs parents")
            if mech.kind == "bernoulli-sigmoid" and mech.params.get("product_parents"):
                idx = []
                for q in mech.params["product_parents"]:
                    if q not in self.parents[n]:
                        raise ConfigurationError(
                            f"node {n!r}: product parent {q!r} is not a parent")
                    idx.append(self.parents[n].index(q))
                # precomputed positions into the parent tuple
                mech.params["product_index"] = idx

    def _canonical_topological_order(self) -> list[str]:
        indeg = {n: len(self.parents[n]) for n in self.nodes}
        children: dict[str, list[str]] = {n: [] for n in self.nodes}
        for n in self.nodes:
            for p in self.parents[n]:
                children[p].append(n)
        ready = sorted(n for n, d in indeg.items() if d == 0)
        order: list[str] = []
        while ready:
            n = ready.pop(0)
            order.append(n)
            changed = False
            for c in children[n]:
                indeg[c] -= 1
                if indeg[c] == 0:
                    ready.append(c)
                    changed = True
            if changed:
                ready.sort()
        if len(order) != len(self.nodes):
            cycle = sorted(n for n, d in indeg.items() if d > 0)
            raise ConfigurationError(f"causal graph has a cycle among {cycle}")
        return order

    @property
    def sources(self) -> list[str]:
        """Exogenous set U: nodes without parents."""
        return [n for n in self.topo_order if not self.parents[n]]

    @property
    def endogenous(self) -> list[str]:
        """Endogenous set V: nodes with at least one parent."""
        return [n for n in self.topo_order if self.parents[n]]

    @property
    def outcome(self) -> str | None:
        bern = [n for n in self.topo_order
                if self.mechanisms[n].kind == "bernoulli-sigmoid"]
        return bern[0] if len(bern) == 1 else None

    @property
    def feature_nodes(self) -> list[str]:
        out = self.outcome
        return [n for n in self.topo_order if n != out]

    # -- sampling -------------------------------------------------------------

    def sample(self, n: int, seed: int) -> "SampleSet":
        if n < 1:
            raise ConfigurationError("sample size must be >= 1")
        rng = np.random.default_rng(seed)
        values: dict[str, np.ndarray] = {}
        for node in self.topo_order:
            mech = self.mechanisms[node]
            pv = [values[p] for p in self.parents[node]]
            if mech.kind == "truncated-normal":
                values[node] = _truncated_normal(rng, mech.params["loc"],
                                                 mech.params["scale"], n)
            elif mech.kind in _GAUSSIAN_KINDS:
                mean = mech.expectation(pv) if pv else mech.params["intercept"]
                values[node] = mean + rng.normal(0.0, mech.params["noise_std"], n)
            else:
                prob = mech.expectation(pv)
                if mech.params.get("sample_mode", "threshold") == "bernoulli":
                    values[node] = (rng.random(n) < prob).astype(np.float64)
                else:
                    values[node] = (prob >= 0.5).astype(np.float64)
        feats = self.feature_nodes
        X = np.column_stack([values[f] for f in feats])
        out = self.outcome
        y = values[out].astype(np.int64) if out is not None else None
        return SampleSet(features=X, feature_names=feats, outcome=y,
                         outcome_name=out, scm=self, seed=seed)

    # -- conditional quantities -------------------------------------------------

    def mechanism_expectation(self, node: str, parent_values: Sequence):
        """E[node | parents]; raises for source nodes."""
        if not self.parents[node]:
            raise NoParentsError(f"node {node!r} has no parents")
        pv = list(parent_values)
        if len(pv) != len(self.parents[node]):
            raise ConfigurationError(
                f"node {node!r} expects {len(self.parents[node])} parent values, got {len(pv)}")
        return self.mechanisms[node].expectation(pv)

    def edge_log_likelihood(self, node: str, row: dict[str, float]) -> float:
        """Gaussian log-density of the node's value given its parents' values."""
        mech = self.mechanisms[node]
        if not self.parents[node]:
            raise NoParentsError(f"node {node!r} has no parents")
        if mech.kind not in _GAUSSIAN_KINDS:
            raise UnsupportedNodeError(
                f"node {node!r}: {mech.kind} has no Gaussian likelihood")
        mean = mech.expectation([row[p] for p in self.parents[node]])
        sd = mech.params["noise_std"]
        z = (row[node] - mean) / sd
        return -0.5 * math.log(2.0 * math.pi * sd * sd) - 0.5 * z * z

    # -- (de)serialization ------------------------------------------------------

    def to_config(self) -> dict:
        return {"nodes": [{
            "name": n,
            "parents": list(self.parents[n]),
            "kind": self.mechanisms[n].kind,
            "params": {k: v for k, v in self.mechanisms[n].params.items()
                       if k != "product_index"},
        } for n in self.nodes]}

    @staticmethod
    def from_config(cfg: dict) -> "Scm":
        nodes = [e["name"] for e in cfg["nodes"]]
        parents = {e["name"]: e.get("parents", []) for e in cfg["nodes"]}
        mechs = {e["name"]: Mechanism(e["kind"], dict(e["params"])) for e in cfg["nodes"]}
        return Scm(nodes, parents, mechs)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_config(), indent=2, sort_keys=True))

    @staticmethod
    def load(path: str | Path) -> "Scm":
        return Scm.from_config(json.loads(Path(path).read_text()))


def _truncated_normal(rng: np.random.Generator, loc: float, scale: float, n: int) -> np.ndarray:
    """Normal draws rejection-sampled until strictly positive."""
    out = rng.normal(loc, scale, n)
    bad = out <= 0.0
    while bad.any():
        out[bad] = rng.normal(loc, scale, int(bad.sum()))
        bad = out <= 0.0
    return out


@dataclass
class SampleSet:
    features: np.ndarray
    feature_names: list[str]
    outcome: np.ndarray | None
    outcome_name: str | None
    scm: Scm
    seed: int

    def __post_init__(self):
        if self.outcome is not None and len(self.outcome) != len(self.features):
            raise ConfigurationError("feature/outcome row counts differ")

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame(self.features, columns=self.feature_names)
        if self.outcome is not None:
            df[self.outcome_name] = self.outcome
        return df

    def to_csv(self, path: str | Path) -> None:
        self.to_frame().to_csv(path, index=False)


def simple_bn_scm(params: SimpleBnParams | None = None) -> Scm:
    """The three-feature benchmark: two positive sources, a quadratic child,
    and a Bernoulli outcome driven by the source product minus the child."""
    p = params or simple_bn_default()
    return Scm(
        nodes=["x1", "x2", "x3", "y"],
        parents={"x3": ["x1", "x2"], "y": ["x1", "x2", "x3"]},
        mechanisms={
            "x1": Mechanism("truncated-normal", {"loc": p.mu1, "scale": p.sigma1}),
            "x2": Mechanism("truncated-normal", {"loc": p.mu2, "scale": p.sigma2}),
            "x3": Mechanism("quadratic-sum-gaussian",
                            {"scale": p.k1, "intercept": p.b1, "noise_std": p.sigma3}),
            "y": Mechanism("bernoulli-sigmoid",
                           {"coeffs": [0.0, 0.0, -1.0], "intercept": p.b2,
                            "product_coeff": p.k2, "product_parents": ["x1", "x2"]}),
        })


def linear_gaussian_scm(nodes: Sequence[str],
                        coeffs: dict[str, dict[str, float]],
                        intercepts: dict[str, float] | None = None,
                        noise_stds: dict[str, float] | None = None,
                        outcome: dict | None = None) -> Scm:
    """Build an all-linear-Gaussian Scm from a coefficient table.

    ``coeffs[child][parent]`` gives the linear weight; nodes absent from the
    table are sources (intercept + noise only). An optional ``outcome`` dict
    {"name", "coeffs": {feature: w}, "intercept"} appends a Bernoulli node.
    """
    intercepts = intercepts or {}
    noise_stds = noise_stds or {}
    parents: dict[str, list[str]] = {}
    mechs: dict[str, Mechanism] = {}
    all_nodes = list(nodes)
    for n in all_nodes:
        ps = sorted(coeffs.get(n, {}).keys())
        parents[n] = ps
        mechs[n] = Mechanism("linear-gaussian", {
            "coeffs": [coeffs.get(n, {})[p] for p in ps],
            "intercept": float(intercepts.get(n, 0.0)),
            "noise_std": float(noise_stds.get(n, 1.0)),
        })
    if outcome is not None:
        name = outcome["name"]
        ps = sorted(outcome["coeffs"].keys())
        all_nodes.append(name)
        parents[name] = ps
        mechs[name] = Mechanism("bernoulli-sigmoid", {
            "coeffs": [outcome["coeffs"][p] for p in ps],
            "intercept": float(outcome.get("intercept", 0.0)),
        })
    return Scm(all_nodes, parents, mechs)


def default_linear_gaussian_config() -> dict:
    """A fixed 14-feature linear-Gaussian stand-in for orchard-style tabular data.

    Four sources feed ten downstream nodes through a sparse DAG; a Bernoulli
    outcome reads three of them. Coefficients are hand-picked so every
    mechanism carries signal without saturating the outcome.
    """
    nodes = [f"n{i:02d}" for i in range(1, 15)]
    coeffs = {
        "n05": {"n01": 0.8, "n02": -0.5},
        "n06": {"n02": 1.2},
        "n07": {"n03": 0.7, "n04": 0.4},
        "n08": {"n05": 0.9},
        "n09": {"n05": 0.5, "n06": -0.6},
        "n10": {"n06": 1.1, "n07": 0.3},
        "n11": {"n07": -0.8},
        "n12": {"n08": 0.6, "n09": 0.5},
        "n13": {"n10": 0.9, "n11": -0.4},
        "n14": {"n12": 0.7, "n13": 0.5},
    }
    intercepts = {n: 0.5 * i for i, n in enumerate(nodes)}
    noise_stds = {n: 0.5 for n in nodes}
    outcome = {"name": "y", "coeffs": {"n12": 0.9, "n13": -0.7, "n14": 0.5},
               "intercept": -2.0}
    return {"nodes": nodes, "coeffs": coeffs, "intercepts": intercepts,
            "noise_stds": noise_stds, "outcome": outcome}
