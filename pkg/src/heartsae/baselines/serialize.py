"""Versioned JSON documents for fitted baseline models.

    {"format": "heartsae-model", "version": 1, "kind": <kind>, "model": {...}}

Trees are nested node objects (``feature``/``threshold``/``left``/``right``
for splits, ``class_distribution`` or ``value`` for leaves); GNB is stored
as parameter tables indexed by class.
"""

from __future__ import annotations

import json
from pathlib import Path

from .ensembles import BoostEnsemble, ForestModel
from .neighbors import GNBModel
from .trees import TreeNode

MODEL_FORMAT = "heartsae-model"
MODEL_VERSION = 1


def to_document(model) -> dict:
    if isinstance(model, TreeNode):
        kind, body = "decision_tree", model.to_dict()
    elif isinstance(model, ForestModel):
        kind, body = "random_forest", model.to_dict()
    elif isinstance(model, BoostEnsemble):
        kind, body = model.kind, model.to_dict()
    elif isinstance(model, GNBModel):
        kind, body = "gnb", model.to_dict()
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    return {"format": MODEL_FORMAT, "version": MODEL_VERSION, "kind": kind, "model": body}


def from_document(doc: dict):
    if doc.get("format") != MODEL_FORMAT:
        raise ValueError("not a heartsae model document")
    if doc.get("version") != MODEL_VERSION:
        raise ValueError(f"unsupported model document version {doc.get('version')!r}")
    kind, body = doc["kind"], doc["model"]
    if kind == "decision_tree":
        return TreeNode.from_dict(body)
    if kind == "random_forest":
        return ForestModel.from_dict(body)
    if kind in ("adaboost", "gradient_boost"):
        return BoostEnsemble.from_dict(body)
    if kind == "gnb":
        return GNBModel.from_dict(body)
    raise ValueError(f"unknown model kind {kind!r}")


def save_model(model, path: str | Path) -> None:
    Path(path).write_text(json.dumps(to_document(model), indent=1) + "\n", encoding="utf-8")


def load_model(path: str | Path):
    return from_document(json.loads(Path(path).read_text(encoding="utf-8")))
