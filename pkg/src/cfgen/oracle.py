"""Binary feasibility oracles, feedback-driven fine-tuning, and constraint
discovery from labeled counterfactual pairs.

An oracle maps (original row, counterfactual row) to {0, 1}. Programmatic
oracles and human labels share one JSON-lines record format, so downstream
code never cares who answered. Strict inequalities are evaluated on raw
(decoded) values with a small tolerance, since soft one-hot decoding and
min-max round trips introduce rounding.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .classifier import ClassifierModel, predict_class
from .data import FeatureSchema, decode, rank_scores
from .errors import ConfigurationError, InsufficientDataError, StateError
from .vae import CfVae, VaeTrainConfig, generate, train_with

TOL = 1e-9


@dataclass
class LabeledQuery:
    query_id: str
    x_enc: np.ndarray
    cf_enc: np.ndarray
    x_raw: dict
    cf_raw: dict
    label: int | None
    provenance: str
    timestamp: str | None = None


@dataclass
class QuerySet:
    queries: list[LabeledQuery]
    source: str = ""

    def __len__(self) -> int:
        return len(self.queries)

    def labeled(self) -> "QuerySet":
        return QuerySet([q for q in self.queries if q.label is not None], self.source)

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        qs = self.queries
        if any(q.label is None for q in qs):
            raise StateError("query set contains unlabeled queries")
        X = np.stack([q.x_enc for q in qs])
        C = np.stack([q.cf_enc for q in qs])
        o = np.array([q.label for q in qs], dtype=np.int64)
        return X, C, o


@dataclass(frozen=True)
class OracleSpec:
    kind: str  # unary | monotonic-rank | ite | scm-monotonic | label-file
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        kinds = ("unary", "monotonic-rank", "ite", "scm-monotonic", "label-file")
        if self.kind not in kinds:
            raise ConfigurationError(f"unknown oracle kind {self.kind!r}")


# -- individual oracles --------------------------------------------------------

def c1_oracle(x_raw, cf_raw, feature: str = "Age") -> int:
    """1 iff the feature does not decrease."""
    return int(float(cf_raw[feature]) >= float(x_raw[feature]) - TOL)


def c2_oracle(x_raw, cf_raw, schema: FeatureSchema,
              age: str = "Age", education: str = "Education") -> int:
    """Education rank strictly up requires age strictly up; equal rank requires
    age non-decreasing; any rank decrease is infeasible."""
    r_x = float(rank_scores(schema, education, [x_raw[education]])[0])
    r_cf = float(rank_scores(schema, education, [cf_raw[education]])[0])
    a_x, a_cf = float(x_raw[age]), float(cf_raw[age])
    if r_cf > r_x + TOL:
        return int(a_cf > a_x + TOL)
    if r_cf < r_x - TOL:
        return 0
    return int(a_cf >= a_x - TOL)


def ite_oracle(x_raw, cf_raw, causes: Sequence[str], effect: str) -> int:
    """1 iff all causes strictly rise and the effect rises, or all causes
    strictly fall and the effect falls. Mixed or unchanged cause moves give 0:
    the move is unverifiable, which we treat as infeasible."""
    if not causes:
        raise ConfigurationError("ite oracle needs at least one cause")
    deltas = [float(cf_raw[c]) - float(x_raw[c]) for c in causes]
    dv = float(cf_raw[effect]) - float(x_raw[effect])
    if all(d > TOL for d in deltas):
        return int(dv > TOL)
    if all(d < -TOL for d in deltas):
        return int(dv < -TOL)
    return 0


def monotonic_oracle(x_raw, cf_raw, causes: Sequence[str], effect: str) -> int:
    """Constraint-satisfaction reading: both implications must hold, and an
    implication whose antecedent does not apply holds vacuously. This is the
    evaluation-side semantics; for labeling, the stricter case-formula
    (ite_oracle) gives far sharper feedback and is what the scm-monotonic
    oracle kind uses."""
    if not causes:
        raise ConfigurationError("monotonic oracle needs at least one cause")
    deltas = [float(cf_raw[c]) - float(x_raw[c]) for c in causes]
    dv = float(cf_raw[effect]) - float(x_raw[effect])
    if all(d > TOL for d in deltas):
        return int(dv > TOL)
    if all(d < -TOL for d in deltas):
        return int(dv < -TOL)
    return 1


def apply_oracle(spec: OracleSpec, x_raw, cf_raw,
                 schema: FeatureSchema | None = None) -> int | None:
    if spec.kind == "label-file":
        return None
    if spec.kind == "unary":
        feature = spec.params["feature"]
        direction = spec.params.get("direction", "non-decrease")
        if direction == "non-decrease":
            return c1_oracle(x_raw, cf_raw, feature)
        return int(float(cf_raw[feature]) <= float(x_raw[feature]) + TOL)
    if spec.kind == "monotonic-rank":
        return c2_oracle(x_raw, cf_raw, schema,
                         age=spec.params.get("age", "Age"),
                         education=spec.params.get("education", "Education"))
    # "ite" and "scm-monotonic" share the strict case formula; they differ
    # only in where the cause list comes from (user-specified vs. read off
    # the causal graph).
    return ite_oracle(x_raw, cf_raw, spec.params["causes"], spec.params["effect"])


def scm_monotonic_spec(scm, effect: str) -> OracleSpec:
    """Oracle spec whose causes are the effect feature's parents in the graph."""
    causes = list(scm.parents.get(effect, ()))
    if not causes:
        raise ConfigurationError(f"{effect!r} has no parents in the causal graph")
    return OracleSpec("scm-monotonic", {"causes": causes, "effect": effect})


def similarity(cf_enc: np.ndarray, candidate_enc: np.ndarray) -> float:
    """exp(-squared distance); 1 at zero distance, strictly decreasing."""
    d = np.asarray(candidate_enc, dtype=np.float64) - np.asarray(cf_enc, dtype=np.float64)
    return float(np.exp(-float(d @ d)))


# -- query construction -----------------------------------------------------------

def build_query_set(vae: CfVae, classifier: ClassifierModel, X_train: np.ndarray,
                    schema: FeatureSchema, oracle: OracleSpec,
                    fraction: float = 0.1, K: int = 10, seed: int = 0,
                    target_class: int | None = None) -> QuerySet:
    """Sample a training subset, generate K counterfactual candidates each,
    and label them (or leave them pending for the labeling UI).

    With ``target_class`` set, only rows not already predicted as that class
    are queried (the population actually being explained); otherwise each
    row aims at the flip of its prediction.
    """
    rng = np.random.default_rng(seed)
    pool = np.arange(len(X_train))
    if target_class is not None:
        pool = pool[np.asarray(predict_class(classifier, X_train)) != target_class]
    m = max(1, int(round(len(pool) * fraction)))
    idx = np.sort(rng.choice(pool, size=m, replace=False))
    X = X_train[idx]
    if target_class is None:
        y_target = 1 - np.asarray(predict_class(classifier, X), dtype=np.int64)
    else:
        y_target = np.full(len(X), int(target_class), dtype=np.int64)
    cfs = generate(vae, X, y_target, K, seed=seed + 1)
    x_rows = decode(schema, X).to_dict("records")
    queries: list[LabeledQuery] = []
    provenance = "pending" if oracle.kind == "label-file" else f"programmatic:{oracle.kind}"
    for i in range(m):
        cf_rows = decode(schema, cfs[i]).to_dict("records")
        for j in range(K):
            label = apply_oracle(oracle, x_rows[i], cf_rows[j], schema)
            queries.append(LabeledQuery(
                query_id=f"q{i * K + j:06d}",
                x_enc=X[i].copy(), cf_enc=cfs[i, j].copy(),
                x_raw=x_rows[i], cf_raw=cf_rows[j],
                label=label, provenance=provenance, timestamp=None))
    src = f"fraction={fraction}, cfs_per_input={K}, oracle={oracle.kind}"
    return QuerySet(queries, source=src)


# -- fine-tuning --------------------------------------------------------------------

DEFAULT_LAMBDA_O = 2350.0


def finetune_config(seed: int = 0, target_class: int | None = None,
                    n_queries: int = 100) -> VaeTrainConfig:
    """Fine-tuning defaults: full-batch, sum-over-queries objective (so the
    pull scales with the number of labels), small steps, many passes."""
    return VaeTrainConfig(validity_weight=150.0, margin=0.15, epochs=300,
                          batch_size=max(64, n_queries), lr=2e-6, seed=seed,
                          target_class=target_class, sum_objective=True)


def finetune(vae: CfVae, queries: QuerySet, lambda_o: float,
             config: VaeTrainConfig, classifier: ClassifierModel) -> CfVae:
    """Continue training on the labeled queries with the feedback-matching term.

    Loss per query: base generator loss for the input, plus
    lambda_o * (label - sim(current output, stored candidate))^2, summed over
    the query set when config.sum_objective is set (the recommended mode).
    """
    labeled = queries.labeled()
    if len(labeled) == 0:
        raise ConfigurationError("fine-tuning needs at least one labeled query")
    if not vae.trained:
        raise StateError("fine-tuning requires a base-trained generator")
    X, C, o = labeled.arrays()
    return train_with(vae, X, classifier, config, query_data=(C, o, lambda_o))


# -- persistence ---------------------------------------------------------------------

def write_queries(path: str | Path, qs: QuerySet) -> None:
    """JSON lines, one record per query; encoded vectors ride along so the
    exact generated candidates survive the round trip."""
    with open(path, "w") as fh:
        for q in qs.queries:
            fh.write(json.dumps({
                "query_id": q.query_id,
                "x": _plain(q.x_raw), "cf": _plain(q.cf_raw),
                "label": q.label, "provenance": q.provenance,
                "timestamp": q.timestamp,
                "x_enc": [float(v) for v in q.x_enc],
                "cf_enc": [float(v) for v in q.cf_enc],
            }) + "\n")


def read_queries(path: str | Path) -> QuerySet:
    queries = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        d = json.loads(line)
        queries.append(LabeledQuery(
            query_id=d["query_id"],
            x_enc=np.asarray(d["x_enc"], dtype=np.float64),
            cf_enc=np.asarray(d["cf_enc"], dtype=np.float64),
            x_raw=d["x"], cf_raw=d["cf"],
            label=d["label"], provenance=d["provenance"],
            timestamp=d.get("timestamp")))
    return QuerySet(queries)


def _plain(row: dict) -> dict:
    return {k: (float(v) if isinstance(v, (int, float, np.floating, np.integer))
                else str(v)) for k, v in row.items()}


# -- constraint discovery ---------------------------------------------------------------

@dataclass(frozen=True)
class DiscoveryResult:
    pair: tuple[str, str]
    constraint: bool
    direction: str | None  # "a->b" naming cause->effect, when flagged
    p_value: float


def _ks_statistic(a: np.ndarray, b: np.ndarray) -> float:
    """Two-sample empirical-CDF sup distance."""
    a = np.sort(a)
    b = np.sort(b)
    both = np.concatenate([a, b])
    ca = np.searchsorted(a, both, side="right") / a.size
    cb = np.searchsorted(b, both, side="right") / b.size
    return float(np.abs(ca - cb).max())


def _pair_statistic(d1: np.ndarray, d2: np.ndarray, labels: np.ndarray) -> float:
    """Max KS over the two delta marginals and the sign-agreement statistic."""
    agree = np.sign(d1) * np.sign(d2)
    f = labels == 1
    return max(_ks_statistic(d1[f], d1[~f]),
               _ks_statistic(d2[f], d2[~f]),
               _ks_statistic(agree[f], agree[~f]))


def discover_constraints(queries: QuerySet, candidate_pairs: Sequence[tuple[str, str]],
                         level: float = 0.01, seed: int = 0,
                         n_permutations: int = 1000) -> list[DiscoveryResult]:
    """Flag pairs whose feasible/infeasible delta distributions differ.

    The max-KS statistic over (delta-a, delta-b, sign agreement) gets a
    permutation p-value; direction comes from the feasible set: if b moves
    while a stays put (and the reverse is rarer), a causes b.
    """
    labeled = queries.labeled()
    labels = np.array([q.label for q in labeled.queries], dtype=np.int64)
    n_f, n_i = int((labels == 1).sum()), int((labels == 0).sum())
    if n_f < 10 or n_i < 10:
        raise InsufficientDataError(
            f"need >= 10 queries per label, have {n_f} feasible / {n_i} infeasible")
    rng = np.random.default_rng(seed)
    results = []
    for a, b in candidate_pairs:
        d1 = np.array([float(q.cf_raw[a]) - float(q.x_raw[a]) for q in labeled.queries])
        d2 = np.array([float(q.cf_raw[b]) - float(q.x_raw[b]) for q in labeled.queries])
        t_obs = _pair_statistic(d1, d2, labels)
        hits = 0
        for _ in range(n_permutations):
            perm = rng.permutation(labels)
            if _pair_statistic(d1, d2, perm) >= t_obs:
                hits += 1
        p = (1 + hits) / (1 + n_permutations)
        flagged = p <= level
        direction = None
        if flagged:
            f = labels == 1
            b_alone = int(((np.abs(d2) > TOL) & (np.abs(d1) <= TOL) & f).sum())
            a_alone = int(((np.abs(d1) > TOL) & (np.abs(d2) <= TOL) & f).sum())
            if b_alone > a_alone:
                direction = f"{a}->{b}"
            elif a_alone > b_alone:
                direction = f"{b}->{a}"
        results.append(DiscoveryResult(pair=(a, b), constraint=bool(flagged),
                                       direction=direction, p_value=float(p)))
    return results
