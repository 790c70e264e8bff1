"""Versioned JSON serialization for trained models.

The document embeds the extractor next to the classifier. Floats are written
with Python's shortest-round-trip repr, so a save/load cycle reproduces every
parameter bit for bit (17 significant digits suffice for float64).
"""

from __future__ import annotations

import json

import numpy as np

from .classifier import GenerativeClassifier, SoftmaxBaseline
from .density import GmmParams
from .extractor import Mlp

MODEL_VERSION = 1

GENERATIVE = "generative"
SOFTMAX_KIND = "softmax"


def _mlp_to_dict(mlp: Mlp) -> dict:
    return {
        "activation": mlp.activation,
        "layers": [
            {"weights": w.tolist(), "biases": b.tolist()}
            for w, b in zip(mlp.weights, mlp.biases)
        ],
    }


def _mlp_from_dict(doc: dict) -> Mlp:
    return Mlp(
        weights=[np.array(layer["weights"], dtype=np.float64) for layer in doc["layers"]],
        biases=[np.array(layer["biases"], dtype=np.float64) for layer in doc["layers"]],
        activation=doc["activation"],
    )


def classifier_to_dict(clf: GenerativeClassifier) -> dict:
    return {
        "version": MODEL_VERSION,
        "kind": GENERATIVE,
        "C": clf.n_classes,
        "M": clf.n_components,
        "D": clf.dim,
        "responsibilityMode": clf.per_class[0].responsibility_mode,
        "prior": clf.class_prior.tolist(),
        "perClass": [
            {
                "weights": p.weights.tolist(),
                "means": p.means.tolist(),
                "variances": p.variances.tolist(),
            }
            for p in clf.per_class
        ],
    }


def classifier_from_dict(doc: dict) -> GenerativeClassifier:
    mode = doc["responsibilityMode"]
    per_class = [
        GmmParams(
            weights=np.array(entry["weights"], dtype=np.float64),
            means=np.array(entry["means"], dtype=np.float64),
            variances=np.array(entry["variances"], dtype=np.float64),
            responsibility_mode=mode,
        )
        for entry in doc["perClass"]
    ]
    return GenerativeClassifier(
        per_class=per_class, class_prior=np.array(doc["prior"], dtype=np.float64)
    )


def baseline_to_dict(base: SoftmaxBaseline) -> dict:
    return {
        "version": MODEL_VERSION,
        "kind": SOFTMAX_KIND,
        "C": base.n_classes,
        "D": base.weights.shape[1],
        "weights": base.weights.tolist(),
        "biases": base.biases.tolist(),
    }


def save_model(path, model, mlp: Mlp) -> None:
    """Write classifier (or baseline) plus embedded extractor as JSON."""
    if isinstance(model, GenerativeClassifier):
        doc = classifier_to_dict(model)
    elif isinstance(model, SoftmaxBaseline):
        doc = baseline_to_dict(model)
    else:
        raise TypeError(f"cannot serialize model of type {type(model).__name__}")
    doc["extractor"] = _mlp_to_dict(mlp)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_model(path):
    """Read a model document; returns (classifier_or_baseline, mlp)."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("version") != MODEL_VERSION:
        raise ValueError(f"unsupported model version {doc.get('version')!r}")
    mlp = _mlp_from_dict(doc["extractor"])
    if doc["kind"] == GENERATIVE:
        return classifier_from_dict(doc), mlp
    if doc["kind"] == SOFTMAX_KIND:
        return (
            SoftmaxBaseline(
                weights=np.array(doc["weights"], dtype=np.float64),
                biases=np.array(doc["biases"], dtype=np.float64),
            ),
            mlp,
        )
    raise ValueError(f"unknown model kind {doc['kind']!r}")
