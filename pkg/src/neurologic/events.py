"""Primitive and activity dictionaries, token embeddings and event mixing."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .numcore import ContractError, MLPSpec, ParamSet, ShapeError, Tensor, as_tensor, mlp_apply

KINDS = ("pasta", "object", "scene")


class DictionaryError(KeyError):
    """Unknown name or id, or a malformed dictionary."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


@dataclass(frozen=True)
class Primitive:
    id: int
    kind: str
    verb: str | None = None
    part: str | None = None
    object: str | None = None

    @property
    def name(self) -> str:
        if self.kind == "pasta":
            return "-".join(t for t in (self.part, self.verb, self.object) if t)
        if self.kind == "object":
            return self.object or ""
        return self.verb or ""

    @property
    def tokens(self) -> tuple[str, ...]:
        return tuple(t for t in (self.part, self.verb, self.object) if t)

    def to_json(self) -> dict:
        out = {"id": self.id, "kind": self.kind}
        for key in ("part", "verb", "object"):
            if getattr(self, key):
                out[key] = getattr(self, key)
        return out


@dataclass(frozen=True)
class Activity:
    id: int
    verb: str
    object: str | None = None

    @property
    def name(self) -> str:
        return f"{self.verb}_{self.object}" if self.object else self.verb

    @property
    def tokens(self) -> tuple[str, ...]:
        return ("human", self.verb) + ((self.object,) if self.object else ())

    def to_json(self) -> dict:
        out = {"id": self.id, "verb": self.verb}
        if self.object:
            out["object"] = self.object
        return out


class _Dictionary:
    entry_label = "entry"

    def __init__(self, entries: Sequence):
        self.entries = tuple(entries)
        for i, e in enumerate(self.entries):
            if e.id != i:
                raise DictionaryError(f"{self.entry_label} ids must be dense and ascending; "
                                      f"position {i} has id {e.id}")
        self._by_name: dict[str, int] = {}
        for e in self.entries:
            if not e.name:
                raise DictionaryError(f"{self.entry_label} {e.id} has an empty name")
            if e.name in self._by_name:
                raise DictionaryError(f"duplicate {self.entry_label} phrase {e.name!r}")
            self._by_name[e.name] = e.id

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, i: int):
        return self.entries[i]

    def __iter__(self):
        return iter(self.entries)

    def __eq__(self, other) -> bool:
        return type(self) is type(other) and self.entries == other.entries

    def __hash__(self):
        return hash(self.entries)

    def id_of(self, name: str) -> int:
        try:
            return self._by_name[name]
        except KeyError:
            raise DictionaryError(f"unknown {self.entry_label} {name!r}") from None

    def name_of(self, i: int) -> str:
        if not 0 <= i < len(self.entries):
            raise DictionaryError(f"unknown {self.entry_label} id {i}")
        return self.entries[i].name

    def names(self) -> list[str]:
        return [e.name for e in self.entries]

    def to_json(self) -> list[dict]:
        return [e.to_json() for e in self.entries]

    def dumps(self) -> str:
        return json.dumps(self.to_json(), ensure_ascii=False, indent=1)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")


class PrimitiveDictionary(_Dictionary):
    entry_label = "primitive"

    @classmethod
    def from_json(cls, items: Iterable[dict]) -> "PrimitiveDictionary":
        entries = []
        for item in items:
            kind = item.get("kind", "pasta")
            if kind not in KINDS:
                raise DictionaryError(f"primitive {item.get('id')}: unknown kind {kind!r}")
            if kind == "pasta" and not (item.get("part") and item.get("verb")):
                raise DictionaryError(f"primitive {item.get('id')}: pasta needs part and verb")
            if kind == "object" and not item.get("object"):
                raise DictionaryError(f"primitive {item.get('id')}: object entry needs 'object'")
            if kind == "scene" and not item.get("verb"):
                raise DictionaryError(f"primitive {item.get('id')}: scene entry needs 'verb'")
            entries.append(Primitive(int(item["id"]), kind, item.get("verb"),
                                     item.get("part"), item.get("object")))
        return cls(entries)

    @classmethod
    def load(cls, path: str | Path) -> "PrimitiveDictionary":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))

    def ids_of_kind(self, *kinds: str) -> list[int]:
        return [e.id for e in self.entries if e.kind in kinds]


class ActivityDictionary(_Dictionary):
    entry_label = "activity"

    @classmethod
    def from_json(cls, items: Iterable[dict]) -> "ActivityDictionary":
        return cls([Activity(int(d["id"]), d["verb"], d.get("object")) for d in items])

    @classmethod
    def load(cls, path: str | Path) -> "ActivityDictionary":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


# -- linguistic substitute ----------------------------------------------------------

def _token_vector(token: str, dim: int, seed: int) -> np.ndarray:
    digest = hashlib.blake2b(f"{seed}\x1f{token}".encode("utf-8"), digest_size=16).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "little"))
    return rng.standard_normal(dim)


def embed_token_phrase(tokens: Sequence[str], dim: int, seed: int = 0) -> np.ndarray:
    """Deterministic unit vector for a token phrase.

    Each token hashes to a Gaussian draw; the draws are averaged and
    L2-normalised, so shared tokens give correlated vectors.
    """
    tokens = [t for t in tokens if t]
    if not tokens:
        raise ContractError("cannot embed an empty phrase")
    if dim <= 0:
        raise ContractError(f"embedding width must be positive, got {dim}")
    v = np.mean([_token_vector(t, dim, seed) for t in tokens], axis=0)
    return v / np.linalg.norm(v)


def embed_dictionary(entries: Iterable, dim: int, seed: int = 0) -> np.ndarray:
    return np.stack([embed_token_phrase(e.tokens, dim, seed) for e in entries])


# -- event space ---------------------------------------------------------------------

def project_event(params: ParamSet, spec: MLPSpec, raw) -> Tensor:
    """Map raw representations (``(..., D)``) to event vectors (``(..., d)``)."""
    raw = as_tensor(raw)
    if raw.shape[-1] != spec.in_width:
        raise ShapeError(f"raw width {raw.shape[-1]} does not match projector input {spec.in_width}")
    return mlp_apply(params, spec, raw)


def mix_expectation(e, not_of_e, score):
    """Expected event under probability ``score``: ``e*score + not_of_e*(1-score)``.

    ``score`` may be a scalar or an array broadcasting against the events'
    leading axes (a trailing axis is added for the event width).
    """
    s = np.asarray(score, dtype=np.float64)
    if np.any(~np.isfinite(s)) or np.any(s < 0) or np.any(s > 1):
        raise ContractError("primitive scores must lie in [0, 1]")
    if np.shape(e)[-1] != np.shape(not_of_e)[-1]:
        raise ShapeError(f"event widths differ: {np.shape(e)} vs {np.shape(not_of_e)}")
    if s.ndim:
        s = s[..., None]
    if isinstance(e, Tensor) or isinstance(not_of_e, Tensor):
        return as_tensor(e) * s + as_tensor(not_of_e) * (1.0 - s)
    return np.asarray(e) * s + np.asarray(not_of_e) * (1.0 - s)


def visual_expectation(e):
    """Visual events are already probabilistic and pass through unchanged."""
    return e
