"""Shared small-scale fixtures: one simulated dataset, one trained classifier,
one briefly trained generator. Session-scoped so the suite pays the training
cost once."""

from __future__ import annotations

import numpy as np
import pytest

from cfgen.classifier import ClassifierConfig, predict_class, train_classifier
from cfgen.data import encode, fit_schema, mad, split
from cfgen.presets import SIMPLE_BN_KINDS, SIMPLE_BN_TARGET
from cfgen.scm import simple_bn_scm
from cfgen.vae import VaeTrainConfig, build_cf_vae, train_base


@pytest.fixture(scope="session")
def bn_setup():
    scm = simple_bn_scm()
    df = scm.sample(2000, seed=7).to_frame()
    sp = split(len(df), 7)
    schema = fit_schema(df.iloc[sp.train], SIMPLE_BN_KINDS, target=SIMPLE_BN_TARGET)
    y = df.y.to_numpy(dtype=np.int64)
    X = {
        "train": encode(schema, df.iloc[sp.train]),
        "val": encode(schema, df.iloc[sp.validation], mode="clamp"),
        "test": encode(schema, df.iloc[sp.test], mode="clamp"),
    }
    return {
        "scm": scm, "df": df, "split": sp, "schema": schema,
        "X": X, "y": {k: y[getattr(sp, v)] for k, v in
                      (("train", "train"), ("val", "validation"), ("test", "test"))},
        "mads": mad(df.iloc[sp.train], schema),
    }


@pytest.fixture(scope="session")
def bn_classifier(bn_setup):
    s = bn_setup
    model = train_classifier(s["X"]["train"], s["y"]["train"],
                             s["X"]["val"], s["y"]["val"],
                             ClassifierConfig(epochs=40, seed=0), s["schema"])
    return model


@pytest.fixture(scope="session")
def bn_vae(bn_setup, bn_classifier):
    s = bn_setup
    vae = build_cf_vae(s["schema"].encoded_width, s["schema"], seed=0)
    train_base(vae, s["X"]["train"], bn_classifier,
               VaeTrainConfig(validity_weight=150, margin=0.15, epochs=8,
                              seed=0, target_class=1))
    return vae


@pytest.fixture()
def bn_eval_inputs(bn_setup, bn_classifier):
    X = bn_setup["X"]["test"]
    keep = predict_class(bn_classifier, X) != 1
    return X[keep][:40]
