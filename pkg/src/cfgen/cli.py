"""Command-line pipeline.

Every subcommand reads and writes artifacts under one run directory and
drops a manifest (config + config hash + outputs) next to them, so a full
run is reproducible from the manifests alone. Missing prerequisites name
the subcommand that produces them.

Typical flow:

    cfgen simulate --scm simple-bn --n 10000 --seed 7 --out run/
    cfgen train-classifier --out run/
    cfgen train-cf --method base --out run/
    cfgen generate --method base --k 10 --target-class 1 --out run/
    cfgen baseline-generate --out run/
    cfgen evaluate --cfs base --metrics all --out run/
    cfgen build-queries --oracle scm-monotonic --out run/
    cfgen finetune --out run/
    cfgen discover-constraints --pairs x1:x3,x2:x3 --out run/
    cfgen serve --out run/ --port 8000
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import presets
from .classifier import ClassifierModel, predict_class, train_classifier
from .data import FeatureSchema, MadStats, SplitIndices, adult_filter, encode, decode, fit_schema, mad, split
from .errors import CfgenError, DependencyError
from .feasibility import (causal_config_from_scm, fit_monotonic_linear,
                          train_model_approx, train_model_based)
from .metrics import AeTrainConfig, compute_report, train_autoencoders
from .nn import load_mlp, save_mlp
from .oracle import (OracleSpec, build_query_set, finetune, finetune_config,
                     discover_constraints, read_queries, write_queries)
from .scm import Scm, default_linear_gaussian_config, linear_gaussian_scm, simple_bn_scm
from .vae import CfVae, VaeTrainConfig, build_cf_vae, generate, train_base

log = logging.getLogger("cfgen")


def _config_hash(d: dict) -> str:
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def _write_manifest(out: Path, command: str, config: dict, outputs: list[str]) -> None:
    m = {"command": command, "config": config, "seed": config.get("seed"),
         "config_hash": _config_hash(config), "outputs": sorted(outputs)}
    (out / f"manifest-{command}.json").write_text(json.dumps(m, indent=2, sort_keys=True))


def _need(path: Path, producer: str) -> Path:
    if not path.exists():
        raise DependencyError(f"missing {path.name}; run `{producer}` first")
    return path


def _load_run(out: Path):
    """Common artifacts: data, schema, split, mads."""
    data = pd.read_csv(_need(out / "data.csv", "simulate"))
    schema = FeatureSchema.load(_need(out / "schema.json", "train-classifier"))
    sp = json.loads(_need(out / "split.json", "train-classifier").read_text())
    idx = SplitIndices(train=np.array(sp["train"]), validation=np.array(sp["validation"]),
                       test=np.array(sp["test"]))
    mads = MadStats(json.loads(_need(out / "mads.json", "train-classifier").read_text()))
    return data, schema, idx, mads


def _load_classifier(out: Path, schema: FeatureSchema) -> ClassifierModel:
    spec, params = load_mlp(_need(out / "classifier.bin", "train-classifier"))
    return ClassifierModel(spec=spec, params=params, schema=schema,
                           n_classes=spec.widths[-1])


def _kinds_for(args, data: pd.DataFrame):
    if args.dataset == "simple-bn":
        return presets.SIMPLE_BN_KINDS, presets.SIMPLE_BN_TARGET, None
    if args.dataset == "adult":
        return presets.ADULT_KINDS, presets.ADULT_TARGET, presets.ADULT_RANKS
    cfg = json.loads(Path(args.schema_config).read_text())
    return cfg["kinds"], cfg["target"], cfg.get("ranks")


# -- subcommands -----------------------------------------------------------------

def cmd_simulate(args) -> list[str]:
    out = Path(args.out)
    if args.scm == "simple-bn":
        scm = simple_bn_scm()
    elif args.scm == "linear-gaussian":
        scm = linear_gaussian_scm(**default_linear_gaussian_config())
    else:
        scm = Scm.load(args.scm)
    ss = scm.sample(args.n, seed=args.seed)
    ss.to_csv(out / "data.csv")
    scm.save(out / "scm.json")
    return ["data.csv", "scm.json"]


def cmd_train_classifier(args) -> list[str]:
    out = Path(args.out)
    data = pd.read_csv(_need(out / "data.csv", "simulate"))
    kinds, target, ranks = _kinds_for(args, data)
    if args.adult_filter:
        data = adult_filter(data, target=target)
        data.to_csv(out / "data.csv", index=False)
    sp = split(len(data), args.seed)
    schema = fit_schema(data.iloc[sp.train], kinds, target=target, rank_vectors=ranks)
    schema.save(out / "schema.json")
    (out / "split.json").write_text(json.dumps(
        {"train": sp.train.tolist(), "validation": sp.validation.tolist(),
         "test": sp.test.tolist()}))
    mads = mad(data.iloc[sp.train], schema)
    (out / "mads.json").write_text(json.dumps(mads.values, sort_keys=True))
    y = pd.to_numeric(data[target]).to_numpy(dtype=np.int64)
    Xtr = encode(schema, data.iloc[sp.train])
    Xva = encode(schema, data.iloc[sp.validation], mode="clamp")
    Xte = encode(schema, data.iloc[sp.test], mode="clamp")
    cfg = presets.simple_bn_classifier_config(args.seed)
    cfg.epochs = args.epochs
    model = train_classifier(Xtr, y[sp.train], Xva, y[sp.validation], cfg, schema)
    acc = float(np.mean(predict_class(model, Xte) == y[sp.test]))
    save_mlp(out / "classifier.bin", model.spec, model.params)
    (out / "classifier-report.json").write_text(json.dumps(
        {"test_accuracy": acc, "val_accuracy": model.history}, indent=2))
    log.info("test accuracy %.4f", acc)
    return ["schema.json", "split.json", "mads.json", "classifier.bin",
            "classifier-report.json"]


def _train_any_cf(args, out: Path) -> CfVae:
    data, schema, sp, _ = _load_run(out)
    clf = _load_classifier(out, schema)
    Xtr = encode(schema, data.iloc[sp.train], mode="clamp")
    vae = build_cf_vae(schema.encoded_width, schema, seed=args.seed)
    cfg = presets.simple_bn_vae_config(args.method, seed=args.seed, epochs=args.epochs) \
        if args.dataset == "simple-bn" else \
        VaeTrainConfig(epochs=args.epochs, seed=args.seed, target_class=args.target_class)
    if args.target_class is not None:
        cfg.target_class = args.target_class
    if args.method == "base":
        return train_base(vae, Xtr, clf, cfg)
    if args.method == "model-based":
        scm = Scm.load(_need(out / "scm.json", "simulate"))
        cc = causal_config_from_scm(scm, schema, weight=args.feasibility_weight
                                    or presets.SIMPLE_BN_CAUSAL_WEIGHT)
        return train_model_based(vae, Xtr, clf, cfg, cc)
    train_df = data.iloc[sp.train]
    pens = [fit_monotonic_linear(train_df, c, e, s)
            for c, e, s in presets.SIMPLE_BN_PAIRWISE] if args.dataset == "simple-bn" \
        else _constraints_from_file(args, train_df)
    weight = args.feasibility_weight or presets.SIMPLE_BN_PENALTY_WEIGHT
    return train_model_approx(vae, Xtr, clf, cfg, pens, weight)


def _constraints_from_file(args, train_df):
    from .feasibility import load_constraints
    if not args.constraints:
        raise DependencyError("model-approx needs --constraints for custom datasets")
    cs = load_constraints(args.constraints, train_df)
    return cs["unary"] + cs["monotonic"]


def cmd_train_cf(args) -> list[str]:
    out = Path(args.out)
    vae = _train_any_cf(args, out)
    name = f"vae-{args.method}"
    vae.save(out / name)
    return [f"{name}/model.json", f"{name}/enc_mean.bin", f"{name}/enc_var.bin",
            f"{name}/dec.bin"]


def _eval_inputs(args, data, schema, sp, clf):
    """Encoded test rows not already predicted as the target class."""
    from .errors import ConfigurationError
    Xte = encode(schema, data.iloc[sp.test], mode="clamp")
    keep = predict_class(clf, Xte) != args.target_class
    X = Xte[keep]
    if len(X) == 0:
        raise ConfigurationError(
            f"every test row is already predicted as class {args.target_class}; "
            "nothing to explain")
    if args.limit:
        X = X[:args.limit]
    return X


def cmd_generate(args) -> list[str]:
    out = Path(args.out)
    data, schema, sp, _ = _load_run(out)
    clf = _load_classifier(out, schema)
    vae = CfVae.load(_need(out / f"vae-{args.method}", "train-cf"))
    X = _eval_inputs(args, data, schema, sp, clf)
    y_target = np.full(len(X), args.target_class, dtype=np.int64)
    cfs = generate(vae, X, y_target, args.k, seed=args.seed, classifier=clf)
    return _write_cfs(out, f"cfs-{args.method}", schema, clf, X, cfs, args.target_class)


def cmd_baseline_generate(args) -> list[str]:
    from .baseline import InstanceOptConfig, optimize_batch
    out = Path(args.out)
    data, schema, sp, _ = _load_run(out)
    clf = _load_classifier(out, schema)
    X = _eval_inputs(args, data, schema, sp, clf)
    cfg = InstanceOptConfig(distance=args.distance, lr=args.lr,
                            max_iterations=args.iterations, seed=args.seed)
    if args.distance == "causal":
        scm = Scm.load(_need(out / "scm.json", "simulate"))
        cfg.causal_config = causal_config_from_scm(
            scm, schema, weight=presets.SIMPLE_BN_CAUSAL_WEIGHT)
    y_target = np.full(len(X), args.target_class, dtype=np.int64)
    cfs = optimize_batch(clf, X, y_target, cfg, schema)
    return _write_cfs(out, f"cfs-baseline-{args.distance}", schema, clf, X, cfs,
                      args.target_class)


def _write_cfs(out: Path, stem: str, schema, clf, X, cfs, target_class) -> list[str]:
    from .classifier import class_scores
    n, k, d = cfs.shape
    flat = cfs.reshape(n * k, d)
    decoded = decode(schema, flat)
    decoded.insert(0, "cf_index", np.tile(np.arange(k), n))
    decoded.insert(0, "input_id", np.repeat(np.arange(n), k))
    decoded["predicted_class"] = predict_class(clf, flat)
    decoded.to_csv(out / f"{stem}.csv", index=False)
    scores_x = class_scores(clf, X)
    scores_cf = class_scores(clf, flat).reshape(n, k, -1)
    with open(out / f"{stem}.jsonl", "w") as fh:
        for i in range(n):
            fh.write(json.dumps({
                "input_id": int(i), "target_class": int(target_class),
                "x_enc": [float(v) for v in X[i]],
                "x_scores": [float(v) for v in scores_x[i]],
                "cfs": [{"cf_enc": [float(v) for v in cfs[i, j]],
                         "scores": [float(v) for v in scores_cf[i, j]]}
                        for j in range(k)],
            }) + "\n")
    return [f"{stem}.csv", f"{stem}.jsonl"]


def read_cfs(path: Path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (X, cfs, y_target) from a generation sidecar."""
    X, rows, targets = [], [], []
    for line in Path(path).read_text().splitlines():
        d = json.loads(line)
        X.append(d["x_enc"])
        rows.append([c["cf_enc"] for c in d["cfs"]])
        targets.append(d["target_class"])
    return (np.array(X, dtype=np.float64), np.array(rows, dtype=np.float64),
            np.array(targets, dtype=np.int64))


def cmd_evaluate(args) -> list[str]:
    out = Path(args.out)
    data, schema, sp, mads = _load_run(out)
    clf = _load_classifier(out, schema)
    X, cfs, y_target = read_cfs(_need(out / f"cfs-{args.cfs}.jsonl",
                                      "generate (or baseline-generate)"))
    constraint = None
    if args.dataset == "simple-bn":
        constraint = presets.SIMPLE_BN_MONOTONIC
    scm = Scm.load(out / "scm.json") if (out / "scm.json").exists() else None
    aes = None
    if args.metrics == "all":
        y = pd.to_numeric(data[schema.target]).to_numpy(dtype=np.int64)
        Xtr = encode(schema, data.iloc[sp.train], mode="clamp")
        aes = train_autoencoders(Xtr, y[sp.train], AeTrainConfig(seed=args.seed))
    report = compute_report(clf, schema, X, cfs, y_target, mads,
                            constraint=constraint, scm=scm, aes=aes)
    (out / f"metrics-{args.cfs}.json").write_text(report.to_json())
    (out / f"metrics-{args.cfs}.txt").write_text(report.to_table() + "\n")
    print(report.to_table())
    return [f"metrics-{args.cfs}.json", f"metrics-{args.cfs}.txt"]


def cmd_build_queries(args) -> list[str]:
    out = Path(args.out)
    data, schema, sp, _ = _load_run(out)
    clf = _load_classifier(out, schema)
    vae = CfVae.load(_need(out / f"vae-{args.method}", "train-cf"))
    Xtr = encode(schema, data.iloc[sp.train], mode="clamp")
    if args.oracle == "scm-monotonic" and args.dataset == "simple-bn":
        spec = presets.SIMPLE_BN_MONOTONIC
    elif args.oracle == "label-file":
        spec = OracleSpec("label-file")
    else:
        spec = OracleSpec(args.oracle, json.loads(args.oracle_params or "{}"))
    qs = build_query_set(vae, clf, Xtr, schema, spec, fraction=args.fraction,
                         K=args.k, seed=args.seed, target_class=args.target_class)
    write_queries(out / "queries.jsonl", qs)
    return ["queries.jsonl"]


def cmd_finetune(args) -> list[str]:
    out = Path(args.out)
    data, schema, sp, _ = _load_run(out)
    clf = _load_classifier(out, schema)
    vae = CfVae.load(_need(out / f"vae-{args.method}", "train-cf"))
    qs = read_queries(_need(out / (args.queries or "queries.jsonl"), "build-queries"))
    labeled = qs.labeled()
    if args.budget:
        order = np.random.default_rng(args.seed).permutation(len(labeled))
        labeled.queries = [labeled.queries[i] for i in order[:args.budget]]
    cfg = finetune_config(seed=args.seed, target_class=args.target_class,
                          n_queries=len(labeled))
    cfg.lr = args.lr
    cfg.epochs = args.epochs
    finetune(vae, labeled, args.lambda_o, cfg, clf)
    vae.save(out / f"vae-{args.method}-finetuned")
    return [f"vae-{args.method}-finetuned/model.json"]


def cmd_discover_constraints(args) -> list[str]:
    out = Path(args.out)
    qs = read_queries(_need(out / (args.queries or "queries.jsonl"), "build-queries"))
    pairs = [tuple(p.split(":")) for p in args.pairs.split(",")]
    results = discover_constraints(qs, pairs, level=args.level, seed=args.seed)
    payload = [{"pair": list(r.pair), "constraint": r.constraint,
                "direction": r.direction, "p_value": r.p_value} for r in results]
    (out / "discovery.json").write_text(json.dumps(payload, indent=2))
    print(json.dumps(payload, indent=2))
    return ["discovery.json"]


def cmd_serve(args) -> list[str]:
    import uvicorn
    from .service import build_app
    app = build_app(Path(args.out), method=args.method,
                    target_class=args.target_class, ui_dir=args.ui_dir,
                    lambda_o=args.lambda_o, seed=args.seed)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return []


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cfgen",
                                description="feasible counterfactual explanations")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, dataset=True):
        sp.add_argument("--out", required=True, help="run directory")
        sp.add_argument("--seed", type=int, default=0)
        if dataset:
            sp.add_argument("--dataset", default="simple-bn",
                            choices=["simple-bn", "adult", "custom"])
            sp.add_argument("--schema-config", help="JSON kinds/target/ranks for custom data")

    s = sub.add_parser("simulate", help="sample a dataset from a causal model")
    s.add_argument("--scm", default="simple-bn",
                   help="simple-bn | linear-gaussian | path to scm.json")
    s.add_argument("--n", type=int, default=10000)
    common(s, dataset=False)

    s = sub.add_parser("train-classifier", help="train the fixed model h")
    s.add_argument("--epochs", type=int, default=100)
    s.add_argument("--adult-filter", action="store_true",
                   help="apply the age/outcome subsampling rule first")
    common(s)

    s = sub.add_parser("train-cf", help="train a counterfactual generator")
    s.add_argument("--method", default="base",
                   choices=["base", "model-based", "model-approx"])
    s.add_argument("--epochs", type=int, default=50)
    s.add_argument("--target-class", type=int, default=1)
    s.add_argument("--feasibility-weight", type=float)
    s.add_argument("--constraints", help="constraint declaration JSON (custom data)")
    common(s)

    s = sub.add_parser("generate", help="generate counterfactuals for test inputs")
    s.add_argument("--method", default="base")
    s.add_argument("--k", type=int, default=10)
    s.add_argument("--target-class", type=int, default=1)
    s.add_argument("--limit", type=int, default=200)
    common(s)

    s = sub.add_parser("baseline-generate", help="per-instance gradient search")
    s.add_argument("--distance", default="l1", choices=["l1", "causal"])
    s.add_argument("--iterations", type=int, default=200)
    s.add_argument("--lr", type=float, default=0.05)
    s.add_argument("--target-class", type=int, default=1)
    s.add_argument("--limit", type=int, default=100)
    common(s)

    s = sub.add_parser("evaluate", help="score a generated batch")
    s.add_argument("--cfs", required=True,
                   help="stem of the cfs sidecar, e.g. base or baseline-l1")
    s.add_argument("--metrics", default="fast", choices=["fast", "all"],
                   help="'all' also trains the per-class autoencoders")
    common(s)

    s = sub.add_parser("build-queries", help="generate and label feedback queries")
    s.add_argument("--method", default="base")
    s.add_argument("--oracle", default="scm-monotonic",
                   choices=["scm-monotonic", "ite", "unary", "monotonic-rank", "label-file"])
    s.add_argument("--oracle-params", help="JSON params for the oracle")
    s.add_argument("--fraction", type=float, default=0.1)
    s.add_argument("--k", type=int, default=10)
    s.add_argument("--target-class", type=int, default=1)
    common(s)

    s = sub.add_parser("finetune", help="fine-tune a generator on labeled queries")
    s.add_argument("--method", default="base")
    s.add_argument("--queries", help="queries file (default queries.jsonl)")
    s.add_argument("--budget", type=int, help="use only this many labeled queries")
    s.add_argument("--lambda-o", type=float, default=presets.SIMPLE_BN_FINETUNE_LAMBDA)
    s.add_argument("--lr", type=float, default=presets.SIMPLE_BN_FINETUNE_LR)
    s.add_argument("--epochs", type=int, default=presets.SIMPLE_BN_FINETUNE_EPOCHS)
    s.add_argument("--target-class", type=int, default=1)
    common(s)

    s = sub.add_parser("discover-constraints", help="two-sample tests on labeled queries")
    s.add_argument("--pairs", required=True, help="comma list of cause:effect pairs")
    s.add_argument("--level", type=float, default=0.01)
    s.add_argument("--queries")
    common(s)

    s = sub.add_parser("serve", help="labeling service + UI")
    s.add_argument("--method", default="base")
    s.add_argument("--target-class", type=int, default=1)
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8000)
    s.add_argument("--ui-dir", help="static UI directory (default frontend/dist)")
    s.add_argument("--lambda-o", type=float, default=presets.SIMPLE_BN_FINETUNE_LAMBDA)
    common(s)
    return p


COMMANDS = {
    "simulate": cmd_simulate,
    "train-classifier": cmd_train_classifier,
    "train-cf": cmd_train_cf,
    "generate": cmd_generate,
    "baseline-generate": cmd_baseline_generate,
    "evaluate": cmd_evaluate,
    "build-queries": cmd_build_queries,
    "finetune": cmd_finetune,
    "discover-constraints": cmd_discover_constraints,
    "serve": cmd_serve,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        outputs = COMMANDS[args.command](args)
    except CfgenError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    config = {k: v for k, v in vars(args).items() if k != "command" and v is not None}
    if args.command != "serve":
        _write_manifest(out, args.command, config, outputs)
    return 0


if __name__ == "__main__":
    sys.exit(main())
