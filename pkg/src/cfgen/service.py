"""Labeling service: streams pending queries to the UI, persists labels,
runs fine-tuning as an exclusive background job, and reports metrics.

Serving reads an immutable model snapshot; fine-tuning trains a clone and
swaps it in atomically under the session lock when done. Labels are appended
to a JSON-lines file and fsync'd before the request is acknowledged, so an
acknowledged label is durable.
"""

from __future__ import annotations

import json
import logging
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from fastapi import FastAPI
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from . import presets
from .classifier import class_scores, predict_class
from .cli import _load_classifier, _load_run
from .data import decode, encode
from .errors import DependencyError
from .metrics import compute_report
from .oracle import finetune, finetune_config, read_queries
from .scm import Scm
from .vae import CfVae, generate

log = logging.getLogger("cfgen.service")


@dataclass
class LabelSession:
    session_id: str
    queries: dict[str, object]          # query_id -> LabeledQuery (pending pool)
    label_path: Path
    labels: dict[str, int] = field(default_factory=dict)
    status: str = "idle"                # idle | running | done
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def pending_ids(self) -> list[str]:
        return [qid for qid in self.queries if qid not in self.labels]


def build_app(run_dir: Path, method: str = "base", target_class: int = 1,
              ui_dir: str | None = None, lambda_o: float = 500.0,
              seed: int = 0, eval_limit: int = 100) -> FastAPI:
    run_dir = Path(run_dir)
    data, schema, sp, mads = _load_run(run_dir)
    clf = _load_classifier(run_dir, schema)
    vae_dir = run_dir / f"vae-{method}"
    if not vae_dir.exists():
        raise DependencyError(f"missing {vae_dir.name}; run `train-cf` first")
    qs = read_queries(run_dir / "queries.jsonl") if (run_dir / "queries.jsonl").exists() else None
    if qs is None:
        raise DependencyError("missing queries.jsonl; run `build-queries` first")
    scm = Scm.load(run_dir / "scm.json") if (run_dir / "scm.json").exists() else None
    constraint = presets.SIMPLE_BN_MONOTONIC if scm is not None and scm.outcome == "y" \
        and set(presets.SIMPLE_BN_KINDS) <= set(scm.nodes) else None

    Xte = encode(schema, data.iloc[sp.test], mode="clamp")
    Xev = Xte[predict_class(clf, Xte) != target_class][:eval_limit]
    y_ev = np.full(len(Xev), target_class, dtype=np.int64)

    state = {
        "vae": CfVae.load(vae_dir),
        "before": None,
        "after": None,
    }

    def report_for(model: CfVae) -> dict:
        cfs = generate(model, Xev, y_ev, K=10, seed=seed + 17)
        rep = compute_report(clf, schema, Xev, cfs, y_ev, mads,
                             constraint=constraint, scm=scm)
        return rep.to_dict()

    session = LabelSession(
        session_id="main",
        queries={q.query_id: q for q in qs.queries},
        label_path=run_dir / "labels.jsonl",
    )
    if session.label_path.exists():
        for line in session.label_path.read_text().splitlines():
            if line.strip():
                rec = json.loads(line)
                session.labels[rec["query_id"]] = int(rec["label"])

    app = FastAPI(title="cfgen labeling service")

    def _session_or_404(sid: str):
        if sid != session.session_id:
            return None
        return session

    @app.get("/session/{sid}/next")
    def next_query(sid: str):
        s = _session_or_404(sid)
        if s is None:
            return JSONResponse({"error": "unknown session"}, status_code=404)
        with s.lock:
            pending = s.pending_ids()
            if not pending:
                return {"done": True, "query": None}
            q = s.queries[pending[0]]
        x_scores = class_scores(clf, q.x_enc)
        cf_scores = class_scores(clf, q.cf_enc)
        return {"done": False, "query": {
            "query_id": q.query_id,
            "x": q.x_raw, "cf": q.cf_raw,
            "x_scores": [float(v) for v in x_scores],
            "cf_scores": [float(v) for v in cf_scores],
            "feature_order": [c.name for c in schema.columns],
        }}

    @app.post("/session/{sid}/label")
    def post_label(sid: str, body: dict):
        s = _session_or_404(sid)
        if s is None:
            return JSONResponse({"error": "unknown session"}, status_code=404)
        qid = body.get("query_id")
        label = body.get("label")
        if qid not in s.queries:
            return JSONResponse({"error": f"unknown query {qid}"}, status_code=404)
        if label not in (0, 1):
            return JSONResponse({"error": "label must be 0 or 1"}, status_code=400)
        with s.lock:
            if qid in s.labels:
                return JSONResponse({"error": f"{qid} already labeled"}, status_code=409)
            q = s.queries[qid]
            record = {"query_id": qid, "x": q.x_raw, "cf": q.cf_raw,
                      "label": int(label), "provenance": "human:ui",
                      "timestamp": pd.Timestamp.utcnow().isoformat(),
                      "x_enc": [float(v) for v in q.x_enc],
                      "cf_enc": [float(v) for v in q.cf_enc]}
            with open(s.label_path, "a") as fh:
                fh.write(json.dumps(record) + "\n")
                fh.flush()
                os.fsync(fh.fileno())
            s.labels[qid] = int(label)
        return {"ok": True, "labeled": len(s.labels)}

    @app.post("/session/{sid}/finetune")
    def run_finetune(sid: str):
        s = _session_or_404(sid)
        if s is None:
            return JSONResponse({"error": "unknown session"}, status_code=404)
        with s.lock:
            if s.status == "running":
                return JSONResponse({"error": "fine-tune already running"},
                                    status_code=409)
            if not s.labels:
                return JSONResponse({"error": "no labels submitted yet"},
                                    status_code=400)
            s.status = "running"
            labeled = read_queries(s.label_path).labeled()

        def job():
            try:
                if state["before"] is None:
                    state["before"] = report_for(state["vae"])
                candidate = state["vae"].clone()
                cfg = finetune_config(seed=seed, target_class=target_class,
                                      n_queries=len(labeled))
                cfg.lr = presets.SIMPLE_BN_FINETUNE_LR
                cfg.epochs = presets.SIMPLE_BN_FINETUNE_EPOCHS
                finetune(candidate, labeled, lambda_o, cfg, clf)
                after = report_for(candidate)
                with s.lock:
                    state["vae"] = candidate
                    state["after"] = after
                    s.status = "done"
                candidate.save(run_dir / f"vae-{method}-finetuned")
            except Exception:
                log.exception("fine-tune job failed")
                with s.lock:
                    s.status = "idle"

        threading.Thread(target=job, daemon=True).start()
        return {"status": "running"}

    @app.get("/session/{sid}/metrics")
    def metrics(sid: str):
        s = _session_or_404(sid)
        if s is None:
            return JSONResponse({"error": "unknown session"}, status_code=404)
        if state["before"] is None:
            # the on-disk checkpoint is always the pre-finetune snapshot
            state["before"] = report_for(CfVae.load(vae_dir))
        return {"status": s.status, "before": state["before"], "after": state["after"]}

    @app.get("/session/{sid}/state")
    def session_state(sid: str):
        s = _session_or_404(sid)
        if s is None:
            return JSONResponse({"error": "unknown session"}, status_code=404)
        with s.lock:
            before = state["before"]
            after = state["after"]
            return {"session_id": s.session_id,
                    "labeled": len(s.labels),
                    "pending": len(s.queries) - len(s.labels),
                    "status": s.status,
                    "before_feasibility": before and before.get("constraint_feasibility"),
                    "after_feasibility": after and after.get("constraint_feasibility")}

    ui = Path(ui_dir) if ui_dir else Path(__file__).resolve().parents[2] / "frontend" / "dist"
    if ui.exists():
        app.mount("/", StaticFiles(directory=str(ui), html=True), name="ui")
    return app
