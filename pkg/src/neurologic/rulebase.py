"""Rules, the rule DSL, rule generators and the evaluate-and-update policy.

A rule ``a & b -> m`` says that primitives ``a`` and ``b`` occurring together
imply activity ``m``.  The rule base keeps, per activity, up to ``l0``
selected rules with their latest classification loss, plus a pool of
candidate rules waiting to be evaluated.
"""
from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .events import ActivityDictionary, DictionaryError, PrimitiveDictionary
from .numcore import ContractError


class RuleSyntaxError(ValueError):
    pass


class EmptyClassError(ValueError):
    """An activity has no positive samples."""


class DegenerateGeneratorError(RuntimeError):
    """A generator keeps drawing empty antecedent sets."""


PROVENANCES = ("human-prior", "annotation", "generated", "searched")


@dataclass(frozen=True)
class Rule:
    activity: int
    antecedents: frozenset[int]
    provenance: str = field(default="human-prior", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "antecedents", frozenset(int(a) for a in self.antecedents))
        if not self.antecedents:
            raise ContractError("a rule needs at least one antecedent")

    @property
    def key(self) -> tuple[int, tuple[int, ...]]:
        return self.activity, tuple(sorted(self.antecedents))

    def vector(self, p: int) -> np.ndarray:
        r = np.zeros(p, dtype=np.int8)
        r[list(self.antecedents)] = 1
        return r

    def fires(self, active: np.ndarray) -> np.ndarray:
        """Boolean truth of the antecedent conjunction per row of ``active``."""
        active = np.asarray(active, dtype=bool)
        return active[..., sorted(self.antecedents)].all(axis=-1)


# -- DSL --------------------------------------------------------------------------

_ARROW = re.compile(r"->|→")
_AND = re.compile(r"&|∧")


def parse_rule(text: str, primitives: PrimitiveDictionary, activities: ActivityDictionary,
               provenance: str = "human-prior") -> Rule:
    """Parse ``phrase (& phrase)* -> activity``; repeated phrases collapse."""
    parts = _ARROW.split(text)
    if len(parts) != 2:
        raise RuleSyntaxError(f"expected exactly one '->' in {text!r}")
    lhs, rhs = parts[0].strip(), parts[1].strip()
    if not lhs:
        raise RuleSyntaxError(f"rule has no antecedents: {text!r}")
    if not rhs:
        raise RuleSyntaxError(f"rule has no activity: {text!r}")
    ids = []
    for token in _AND.split(lhs):
        token = token.strip()
        if not token:
            raise RuleSyntaxError(f"empty antecedent in {text!r}")
        ids.append(primitives.id_of(token))
    return Rule(activities.id_of(rhs), frozenset(ids), provenance)


def format_rule(rule: Rule, primitives: PrimitiveDictionary, activities: ActivityDictionary) -> str:
    lhs = " & ".join(primitives.name_of(a) for a in sorted(rule.antecedents))
    return f"{lhs} -> {activities.name_of(rule.activity)}"


def write_rule_file(path: str | Path, rules: Sequence[Rule], primitives: PrimitiveDictionary,
                    activities: ActivityDictionary, losses: Sequence[float] | None = None,
                    header: str | None = None) -> Path:
    """Write the DSL file plus a ``<name>.meta.json`` sidecar keyed by line number."""
    path = Path(path)
    lines, meta = [], {}
    if header:
        lines.extend(f"# {h}" for h in header.splitlines())
    for i, rule in enumerate(rules):
        lines.append(format_rule(rule, primitives, activities))
        entry = {"provenance": rule.provenance}
        if losses is not None and losses[i] is not None and math.isfinite(losses[i]):
            entry["loss"] = float(losses[i])
        meta[str(len(lines))] = entry
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    sidecar_path(path).write_text(json.dumps(meta, indent=1, sort_keys=True), encoding="utf-8")
    return path


def sidecar_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta.json")


def read_rule_file(path: str | Path, primitives: PrimitiveDictionary,
                   activities: ActivityDictionary) -> list[Rule]:
    path = Path(path)
    side = sidecar_path(path)
    meta = json.loads(side.read_text(encoding="utf-8")) if side.exists() else {}
    rules = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        prov = meta.get(str(lineno), {}).get("provenance", "human-prior")
        try:
            rules.append(parse_rule(text, primitives, activities, prov))
        except (RuleSyntaxError, DictionaryError) as exc:
            raise type(exc)(f"{path}:{lineno}: {exc}") from None
    return rules


# -- statistics ----------------------------------------------------------------------

def active_primitives(s_pri: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    return np.asarray(s_pri) >= threshold


def min_max(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    lo, hi = values.min(), values.max()
    if hi == lo:
        return np.full_like(values, 0.5)
    return (values - lo) / (hi - lo)


def cooccurrence_counts(s_pri: np.ndarray, labels: np.ndarray, activity: int) -> np.ndarray:
    pos = np.asarray(labels)[:, activity] > 0
    if not pos.any():
        raise EmptyClassError(f"activity {activity} has no positive samples")
    return active_primitives(s_pri)[pos].sum(axis=0).astype(np.float64)


def cooccurrence_prior(s_pri: np.ndarray, labels: np.ndarray, activity: int) -> np.ndarray:
    """Min-max normalised co-occurrence counts of each primitive with ``activity``."""
    return min_max(cooccurrence_counts(s_pri, labels, activity))


def npmi(s_pri: np.ndarray, labels: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Normalised pointwise mutual information, shape ``(p, A)``."""
    if eps <= 0:
        raise ContractError("smoothing constant must be positive")
    x = active_primitives(s_pri).astype(np.float64)
    y = (np.asarray(labels) > 0).astype(np.float64)
    n = x.shape[0]
    if n == 0:
        raise ContractError("npmi needs a nonempty dataset")
    return npmi_from_probs(x.mean(axis=0)[:, None], y.mean(axis=0)[None, :], (x.T @ y) / n, eps)


def npmi_from_probs(px, py, pxy, eps: float = 1e-6) -> np.ndarray:
    px, py, pxy = (np.asarray(v, dtype=np.float64) + eps for v in (px, py, pxy))
    out = np.log(pxy / (px * py)) / -np.log(pxy)
    return np.clip(out, -1.0, 1.0)


# -- generators ----------------------------------------------------------------------

@dataclass(frozen=True)
class GeneratorProfile:
    activity: int
    prior: np.ndarray
    beta: float
    increase: np.ndarray

    @property
    def probs(self) -> np.ndarray:
        return perturb(self.prior, self.beta, self.increase)


def perturb(prior: np.ndarray, beta: float, increase: np.ndarray) -> np.ndarray:
    prior = np.asarray(prior, dtype=np.float64)
    return np.where(increase, prior + beta * (1.0 - prior), (1.0 - beta) * prior)


def perturbed_generator(prior: np.ndarray, beta: float, rng: np.random.Generator,
                        activity: int = 0) -> GeneratorProfile:
    """Move each prior probability toward 0 or 1 (chosen at random) by ``beta``."""
    if not 0.0 <= beta <= 1.0:
        raise ContractError(f"beta must lie in [0, 1], got {beta}")
    prior = np.asarray(prior, dtype=np.float64)
    if np.any(prior < 0) or np.any(prior > 1):
        raise ContractError("prior probabilities must lie in [0, 1]")
    increase = rng.random(prior.shape) < 0.5
    return GeneratorProfile(activity, prior.copy(), float(beta), increase)


def bernoulli_kl(p, q) -> np.ndarray:
    """KL(B(p) || B(q)) with the 0·log 0 = 0 convention."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(p > 0, p * np.log(p / q), 0.0)
        b = np.where(p < 1, (1 - p) * np.log((1 - p) / (1 - q)), 0.0)
    return a + b


def sample_rules(gen: GeneratorProfile, n: int, rng: np.random.Generator,
                 max_empty: int = 1000) -> list[Rule]:
    if n < 1:
        raise ContractError("need n >= 1")
    probs = gen.probs
    rules = []
    empty = 0
    while len(rules) < n:
        draw = np.flatnonzero(rng.random(probs.shape) < probs)
        if draw.size == 0:
            empty += 1
            if empty >= max_empty:
                raise DegenerateGeneratorError(
                    f"{max_empty} consecutive empty draws for activity {gen.activity}")
            continue
        empty = 0
        rules.append(Rule(gen.activity, frozenset(draw.tolist()), "generated"))
    return rules


def generated_candidates(prior: np.ndarray, activity: int, rng: np.random.Generator,
                         thetas: Iterable[int] = range(11), per_generator: int = 5) -> list[Rule]:
    """Rules from the generators ``beta = 0.1 * theta`` (default 11 x 5 = 55)."""
    rules = []
    for theta in thetas:
        gen = perturbed_generator(prior, 0.1 * theta, rng, activity)
        rules.extend(sample_rules(gen, per_generator, rng))
    return rules


def harvest_annotation_rules(s_pri: np.ndarray, labels: np.ndarray, activity: int, n: int,
                             rng: np.random.Generator) -> list[Rule]:
    """Active-primitive sets of randomly drawn positive samples, deduplicated."""
    pos = np.flatnonzero(np.asarray(labels)[:, activity] > 0)
    if pos.size == 0:
        raise EmptyClassError(f"activity {activity} has no positive samples")
    active = active_primitives(s_pri)
    seen, rules = set(), []
    for i in rng.permutation(pos):
        ants = frozenset(np.flatnonzero(active[i]).tolist())
        if not ants or ants in seen:
            continue
        seen.add(ants)
        rules.append(Rule(activity, ants, "annotation"))
        if len(rules) >= n:
            break
    return rules


def aggregate_rules(rules: Sequence[Rule], n: int, p: int, metric: str = "euclidean") -> list[Rule]:
    """Deduplicate annotated rules, rank by distance to their mean vector and
    keep ``n`` at equal intervals along the ranking."""
    unique: dict = {}
    for r in rules:
        unique.setdefault(r.key, r)
    pool = list(unique.values())
    if n >= len(pool):
        return pool
    vecs = np.stack([r.vector(p) for r in pool]).astype(np.float64)
    centre = vecs.mean(axis=0)
    if metric == "euclidean":
        dist = np.linalg.norm(vecs - centre, axis=1)
    elif metric == "cosine":
        dist = 1.0 - vecs @ centre / (np.linalg.norm(vecs, axis=1) * np.linalg.norm(centre))
    else:
        raise ContractError(f"unknown metric {metric!r}")
    order = np.argsort(dist, kind="stable")
    picks = np.round(np.linspace(0, len(pool) - 1, n)).astype(int)
    return [pool[order[i]] for i in picks]


# -- the rule base ---------------------------------------------------------------------

@dataclass
class RuleBase:
    n_activities: int
    l0: int = 15
    selected: dict[int, list[Rule]] = field(default_factory=dict)
    losses: dict[int, list[float]] = field(default_factory=dict)
    candidates: dict[int, list[Rule]] = field(default_factory=dict)

    def __post_init__(self):
        if self.l0 < 1:
            raise ContractError(f"l0 must be >= 1, got {self.l0}")
        for m in range(self.n_activities):
            self.selected.setdefault(m, [])
            self.losses.setdefault(m, [math.nan] * len(self.selected[m]))
            self.candidates.setdefault(m, [])

    def copy(self) -> "RuleBase":
        return RuleBase(self.n_activities, self.l0,
                        {m: list(v) for m, v in self.selected.items()},
                        {m: list(v) for m, v in self.losses.items()},
                        {m: list(v) for m, v in self.candidates.items()})

    def _has(self, rule: Rule) -> bool:
        return any(r.antecedents == rule.antecedents for r in self.selected[rule.activity])

    def add_selected(self, rule: Rule, loss: float = math.nan) -> bool:
        """Insert unless duplicate or the activity is at capacity."""
        if self._has(rule) or len(self.selected[rule.activity]) >= self.l0:
            return False
        self.selected[rule.activity].append(rule)
        self.losses[rule.activity].append(loss)
        return True

    def add_candidate(self, rule: Rule) -> bool:
        pool = self.candidates[rule.activity]
        if self._has(rule) or any(r.antecedents == rule.antecedents for r in pool):
            return False
        pool.append(rule)
        return True

    def rules(self, activity: int) -> list[Rule]:
        return self.selected[activity]

    def all_selected(self) -> list[Rule]:
        return [r for m in range(self.n_activities) for r in self.selected[m]]

    def all_candidates(self) -> list[Rule]:
        return [r for m in range(self.n_activities) for r in self.candidates[m]]

    def counts(self) -> list[int]:
        return [len(self.selected[m]) for m in range(self.n_activities)]

    def checksum(self) -> str:
        h = hashlib.sha256()
        for m in range(self.n_activities):
            for r in self.selected[m]:
                h.update(repr(r.key).encode())
        return h.hexdigest()

    @classmethod
    def from_rules(cls, rules: Iterable[Rule], n_activities: int, l0: int = 15) -> "RuleBase":
        base = cls(n_activities, l0)
        for r in rules:
            base.add_selected(r)
        return base

    def save(self, path: str | Path, primitives: PrimitiveDictionary,
             activities: ActivityDictionary, header: str | None = None) -> Path:
        rules = self.all_selected()
        losses = [x for m in range(self.n_activities) for x in self.losses[m]]
        return write_rule_file(path, rules, primitives, activities, losses, header)


def update_rules(base: RuleBase, candidate_losses: dict[int, Sequence[float]],
                 selected_losses: dict[int, Sequence[float]], l0: int | None = None
                 ) -> tuple[RuleBase, dict[int, dict[str, list]]]:
    """One evaluate-and-update pass over every activity.

    A candidate whose loss beats the worst selected rule is appended while
    the activity is below capacity and otherwise replaces that worst rule.
    Returns the new base and, per activity, the rules added and removed.
    """
    l0 = base.l0 if l0 is None else l0
    if l0 < 1:
        raise ContractError(f"l0 must be >= 1, got {l0}")
    out = base.copy()
    out.l0 = l0
    diff: dict[int, dict[str, list]] = {}
    for m in range(base.n_activities):
        cands = base.candidates[m]
        c_loss = list(candidate_losses.get(m, []))
        s_loss = [float(x) for x in selected_losses.get(m, base.losses[m])]
        if len(c_loss) != len(cands) or len(s_loss) != len(base.selected[m]):
            raise ContractError(f"activity {m}: one loss per rule is required")
        if len(s_loss) > l0:
            raise ContractError(f"activity {m} holds {len(s_loss)} rules, above l0={l0}")
        if not all(math.isfinite(x) for x in list(c_loss) + s_loss):
            raise ContractError(f"activity {m}: losses must be finite")
        sel = list(base.selected[m])
        added, removed, kept_out = [], [], []
        for rule, loss in zip(cands, c_loss):
            if any(r.antecedents == rule.antecedents for r in sel):
                continue
            worst = max(s_loss) if s_loss else math.inf
            if loss < worst:
                if len(sel) < l0:
                    sel.append(rule)
                    s_loss.append(float(loss))
                else:
                    k = int(np.argmax(s_loss))
                    removed.append(sel[k])
                    sel[k] = rule
                    s_loss[k] = float(loss)
                added.append(rule)
            else:
                kept_out.append(rule)
        out.selected[m] = sel
        out.losses[m] = s_loss
        out.candidates[m] = [r for r in cands if r in kept_out]
        added = [r for r in added if r in sel]
        removed = [r for r in removed if r not in sel]
        if added or removed:
            diff[m] = {"added": added, "removed": removed}
    return out, diff


def with_provenance(rule: Rule, provenance: str) -> Rule:
    return replace(rule, provenance=provenance)
