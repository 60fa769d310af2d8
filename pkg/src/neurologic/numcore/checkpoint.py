"""JSON parameter checkpoints tagged ``neurologic-ckpt-v1``."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .nn import ParamSet
from .tensor import ContractError

FORMAT_TAG = "neurologic-ckpt-v1"


def to_document(params: ParamSet, extra: dict | None = None) -> dict:
    doc = {
        "format": FORMAT_TAG,
        "step": params.step,
        "params": {
            name: {"shape": list(t.shape), "data": t.data.reshape(-1).tolist()}
            for name, t in params.items()
        },
    }
    if extra:
        doc["meta"] = extra
    return doc


def from_document(doc: dict) -> tuple[ParamSet, dict]:
    if doc.get("format") != FORMAT_TAG:
        raise ContractError(f"not a {FORMAT_TAG} checkpoint (format={doc.get('format')!r})")
    params = ParamSet()
    for name, entry in doc["params"].items():
        shape = tuple(entry["shape"])
        data = np.asarray(entry["data"], dtype=np.float64)
        if data.size != int(np.prod(shape)):
            raise ContractError(f"{name}: {data.size} values for shape {shape}")
        params.add(name, data.reshape(shape))
    params.step = int(doc.get("step", 0))
    return params, doc.get("meta", {})


def save(path: str | Path, params: ParamSet, extra: dict | None = None) -> None:
    Path(path).write_text(json.dumps(to_document(params, extra), sort_keys=True), encoding="utf-8")


def load(path: str | Path) -> tuple[ParamSet, dict]:
    return from_document(json.loads(Path(path).read_text(encoding="utf-8")))
