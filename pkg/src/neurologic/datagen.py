"""Synthetic activity worlds: dictionaries, ground-truth rules and noisy detections."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .events import Activity, ActivityDictionary, Primitive, PrimitiveDictionary
from .numcore import ContractError
from .rng import stream
from .rulebase import Rule, aggregate_rules, format_rule, parse_rule

PARTS = ("hand", "head", "foot", "arm", "hip", "leg", "torso", "mouth")
VERBS = ("hold", "touch", "carry", "kick", "look_at", "eat", "push", "pull", "sit_on",
         "ride", "throw", "catch", "wash", "cut", "lift", "squeeze", "step_on", "hug",
         "point_at", "drink_with", "talk_to", "bend", "run", "walk")
OBJECTS = ("cup", "ball", "bicycle", "horse", "apple", "knife", "book", "phone", "oven",
           "kite", "chair", "bottle", "umbrella", "dog", "cat", "bus", "boat", "bench",
           "laptop", "pizza", "skis", "surfboard", "racket", "bowl")
ACT_VERBS = ("drink_with", "ride", "hold", "eat", "kick", "throw", "cut", "read", "wash",
             "carry", "pet", "repair", "fly", "sit_on", "hug", "inspect", "open", "push",
             "type_on", "catch", "lift", "board", "feed", "clean")


@dataclass(frozen=True)
class WorldSpec:
    n_primitives: int = 20
    n_activities: int = 8
    n_objects: int = 5
    n_scenes: int = 0
    rules_min: int = 1
    rules_max: int = 3
    antecedents_min: int = 2
    antecedents_max: int = 3
    n_samples: int = 2000
    pos_fraction: float = 0.2
    hard_negative_rate: float = 0.6
    background_rate: float = 0.08
    tp_beta: tuple[float, float] = (8.0, 2.0)
    fp_beta: tuple[float, float] = (2.0, 8.0)
    inst_pos_beta: tuple[float, float] = (6.0, 3.0)
    inst_neg_beta: tuple[float, float] = (3.0, 6.0)
    noiseless: bool = False
    test_fraction: float = 0.3
    visual_dim: int = 0
    visual_noise: float = 1.0
    relevance_primitives: tuple[int, ...] = ()
    relevance_scale: float = 0.5
    annotators: int = 5
    prior_rules_per_activity: int = 3
    exclude_gt_from_prior: bool = False

    @classmethod
    def from_dict(cls, d: dict) -> "WorldSpec":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ContractError(f"unknown world setting(s): {', '.join(sorted(unknown))}")
        kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    def validate(self) -> None:
        if self.n_activities < 1:
            raise ContractError("a world needs at least one activity")
        if not 1 <= self.antecedents_min <= self.antecedents_max:
            raise ContractError("need 1 <= antecedents_min <= antecedents_max")
        if not 1 <= self.rules_min <= self.rules_max:
            raise ContractError("need 1 <= rules_min <= rules_max")
        usable = self.n_primitives - self.n_scenes
        if usable < self.antecedents_max:
            raise ContractError(f"{usable} rule-usable primitives cannot hold "
                                f"{self.antecedents_max}-antecedent rules")
        if not 0 < self.pos_fraction < 1:
            raise ContractError("pos_fraction must lie in (0, 1)")
        if self.n_objects > len(OBJECTS) or self.n_objects > self.n_primitives - self.n_scenes:
            raise ContractError("too many object primitives")
        if self.n_activities > len(ACT_VERBS) * len(OBJECTS):
            raise ContractError("too many activities for the built-in vocabulary")
        n_pasta = self.n_primitives - self.n_objects - self.n_scenes
        if n_pasta > len(PARTS) * len(VERBS) * 2:
            raise ContractError("too many part-state primitives for the built-in vocabulary")
        if math.comb(usable, self.antecedents_min) < self.n_activities * self.rules_max:
            raise ContractError("not enough distinct antecedent sets for the requested rules")


@dataclass
class World:
    spec: WorldSpec
    primitives: PrimitiveDictionary
    activities: ActivityDictionary
    gt_rules: list[Rule]
    prior_rules: list[Rule]
    visual_templates: np.ndarray | None = field(default=None, repr=False)

    def rules_of(self, activity: int) -> list[Rule]:
        return [r for r in self.gt_rules if r.activity == activity]

    def oracle(self, active: np.ndarray) -> np.ndarray:
        """Boolean labels from the ground-truth rules, shape ``(n, A)``."""
        active = np.atleast_2d(np.asarray(active, dtype=bool))
        out = np.zeros((active.shape[0], len(self.activities)), dtype=np.int8)
        for r in self.gt_rules:
            out[:, r.activity] |= r.fires(active)
        return out

    def to_json(self) -> dict:
        fmt = lambda r: format_rule(r, self.primitives, self.activities)  # noqa: E731
        doc = {
            "spec": self.spec.to_dict(),
            "primitives": self.primitives.to_json(),
            "activities": self.activities.to_json(),
            "gt_rules": [fmt(r) for r in self.gt_rules],
            "prior_rules": [fmt(r) for r in self.prior_rules],
        }
        if self.visual_templates is not None:
            doc["visual_templates"] = self.visual_templates.tolist()
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "World":
        prims = PrimitiveDictionary.from_json(doc["primitives"])
        acts = ActivityDictionary.from_json(doc["activities"])
        vt = doc.get("visual_templates")
        return cls(WorldSpec.from_dict(doc.get("spec", {})), prims, acts,
                   [parse_rule(t, prims, acts) for t in doc["gt_rules"]],
                   [parse_rule(t, prims, acts) for t in doc.get("prior_rules", [])],
                   None if vt is None else np.asarray(vt, dtype=np.float64))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1, ensure_ascii=False),
                              encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "World":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def _dictionaries(spec: WorldSpec, rng: np.random.Generator):
    objects = [OBJECTS[i] for i in rng.permutation(len(OBJECTS))]
    pairs = [(p, v) for p in PARTS for v in VERBS]
    order = rng.permutation(len(pairs) * 2)
    n_pasta = spec.n_primitives - spec.n_objects - spec.n_scenes
    entries = []
    for k in order[:n_pasta]:
        part, verb = pairs[k % len(pairs)]
        entries.append((part, verb, "sth" if k >= len(pairs) else None))
    prims = [Primitive(i, "pasta", verb, part, obj) for i, (part, verb, obj) in enumerate(entries)]
    for j in range(spec.n_objects):
        prims.append(Primitive(len(prims), "object", object=objects[j]))
    for j in range(spec.n_scenes):
        prims.append(Primitive(len(prims), "scene", verb=f"scene_{j}"))
    combos = [(v, o) for v in ACT_VERBS for o in objects]
    acts = [Activity(i, *combos[k]) for i, k in
            enumerate(rng.choice(len(combos), size=spec.n_activities, replace=False))]
    return PrimitiveDictionary(prims), ActivityDictionary(acts)


def _gt_rules(spec: WorldSpec, prims: PrimitiveDictionary, rng: np.random.Generator) -> list[Rule]:
    usable = np.array(prims.ids_of_kind("pasta", "object"))
    seen: set[frozenset] = set()
    rules = []
    for m in range(spec.n_activities):
        k = int(rng.integers(spec.rules_min, spec.rules_max + 1))
        made = 0
        tries = 0
        while made < k:
            tries += 1
            if tries > 10_000:
                raise ContractError("could not draw distinct ground-truth rules")
            size = int(rng.integers(spec.antecedents_min, spec.antecedents_max + 1))
            ants = frozenset(rng.choice(usable, size=size, replace=False).tolist())
            # a rule may not contain another rule, or one would never be needed
            if any(ants <= s or s <= ants for s in seen):
                continue
            seen.add(ants)
            rules.append(Rule(m, ants, "human-prior"))
            made += 1
    return rules


def _annotator_variant(rule: Rule, usable: np.ndarray, rng: np.random.Generator) -> Rule:
    ants = set(rule.antecedents)
    roll = rng.random()
    others = [int(u) for u in usable if u not in ants]
    if roll < 0.2:
        pass
    elif roll < 0.45 and len(ants) > 1:
        ants.discard(int(rng.choice(sorted(ants))))
    elif roll < 0.75 and others:
        ants.discard(int(rng.choice(sorted(ants))))
        ants.add(int(rng.choice(others)))
    elif others:
        ants.add(int(rng.choice(others)))
    return Rule(rule.activity, frozenset(ants), "human-prior")


def _prior_rules(spec: WorldSpec, world_rules: list[Rule], prims: PrimitiveDictionary,
                 rng: np.random.Generator) -> list[Rule]:
    """Simulated annotators write variants of the true rules; the variants are
    aggregated by distance rank into a small per-activity prior."""
    usable = np.array(prims.ids_of_kind("pasta", "object"))
    gt_sets = {r.key for r in world_rules}
    out = []
    for m in range(spec.n_activities):
        mine = [r for r in world_rules if r.activity == m]
        drafts = [_annotator_variant(r, usable, rng) for r in mine for _ in range(spec.annotators)]
        if spec.exclude_gt_from_prior:
            drafts = [r for r in drafts if r.key not in gt_sets]
            while not drafts:
                r = _annotator_variant(mine[0], usable, rng)
                if r.key not in gt_sets:
                    drafts.append(r)
        out.extend(aggregate_rules(drafts, spec.prior_rules_per_activity, len(prims)))
    return out


def make_world(spec: WorldSpec, seed: int) -> World:
    spec.validate()
    rng = stream(seed, "world")
    prims, acts = _dictionaries(spec, rng)
    gt = _gt_rules(spec, prims, rng)
    prior = _prior_rules(spec, gt, prims, stream(seed, "world", "prior"))
    templates = None
    if spec.visual_dim > 0:
        templates = stream(seed, "world", "visual").standard_normal((len(prims), spec.visual_dim))
    return World(spec, prims, acts, gt, prior, templates)


# -- datasets -----------------------------------------------------------------------------

@dataclass
class Dataset:
    ids: list[str]
    split: np.ndarray
    s_pri: np.ndarray
    s_inst: np.ndarray
    labels: np.ndarray
    gt_pri: np.ndarray | None = None
    visual: np.ndarray | None = None
    mr: float = 0.0

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def n_primitives(self) -> int:
        return self.s_pri.shape[1]

    @property
    def n_activities(self) -> int:
        return self.labels.shape[1]

    def subset(self, index) -> "Dataset":
        index = np.asarray(index, dtype=np.intp)
        pick = lambda a: None if a is None else a[index]  # noqa: E731
        return Dataset([self.ids[i] for i in index], self.split[index], self.s_pri[index],
                       self.s_inst[index], self.labels[index], pick(self.gt_pri),
                       pick(self.visual), self.mr)

    def part(self, name: str) -> "Dataset":
        return self.subset(np.flatnonzero(self.split == name))

    def with_gt_primitives(self) -> "Dataset":
        if self.gt_pri is None:
            raise ContractError("dataset carries no ground-truth primitives")
        return replace(self, s_pri=self.gt_pri.astype(np.float64).copy())

    def to_jsonl(self) -> str:
        lines = []
        for i, sid in enumerate(self.ids):
            row = {"id": sid, "split": str(self.split[i]),
                   "s_pri": self.s_pri[i].tolist(),
                   "s_inst": self.s_inst[i].tolist(),
                   "labels": self.labels[i].astype(int).tolist()}
            if self.gt_pri is not None:
                row["gt_pri"] = self.gt_pri[i].astype(int).tolist()
            if self.visual is not None:
                row["f_vis"] = self.visual[i].tolist()
            lines.append(json.dumps(row))
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")

    @classmethod
    def from_jsonl(cls, text: str, n_activities: int | None = None) -> "Dataset":
        rows = [json.loads(line) for line in text.splitlines() if line.strip()]
        if not rows:
            raise ContractError("empty dataset")
        A = n_activities or len(rows[0]["labels"])

        def inst(v):
            return np.full(A, float(v)) if np.isscalar(v) else np.asarray(v, dtype=np.float64)

        s_pri = np.asarray([r["s_pri"] for r in rows], dtype=np.float64)
        if np.any((s_pri < 0) | (s_pri > 1)):
            raise ContractError("primitive probabilities must lie in [0, 1]")
        labels = np.asarray([r["labels"] for r in rows], dtype=np.int8)
        if labels.shape[1] != A:
            raise ContractError(f"label width {labels.shape[1]} != {A}")
        gt = [r.get("gt_pri") for r in rows]
        vis = [r.get("f_vis") for r in rows]
        return cls([str(r["id"]) for r in rows],
                   np.asarray([r.get("split", "train") for r in rows]),
                   s_pri, np.stack([inst(r.get("s_inst", 1.0)) for r in rows]), labels,
                   None if any(g is None for g in gt) else np.asarray(gt, dtype=np.int8),
                   None if any(v is None for v in vis) else np.asarray(vis, dtype=np.float64))

    @classmethod
    def load(cls, path: str | Path, n_activities: int | None = None) -> "Dataset":
        return cls.from_jsonl(Path(path).read_text(encoding="utf-8"), n_activities)


def _positive_active(world: World, rng: np.random.Generator, activity: int) -> np.ndarray:
    p = len(world.primitives)
    active = rng.random(p) < world.spec.background_rate
    rules = world.rules_of(activity)
    rule = rules[int(rng.integers(len(rules)))]
    active[sorted(rule.antecedents)] = True
    return active


def _negative_active(world: World, rng: np.random.Generator) -> np.ndarray:
    p = len(world.primitives)
    for _ in range(100):
        active = rng.random(p) < world.spec.background_rate
        if rng.random() < world.spec.hard_negative_rate:
            rule = world.gt_rules[int(rng.integers(len(world.gt_rules)))]
            ants = sorted(rule.antecedents)
            keep = rng.choice(ants, size=len(ants) - 1, replace=False)
            active[keep] = True
        fired = world.oracle(active)[0]
        if not fired.any():
            return active
    # background kept completing rules; drop one antecedent of each firing rule
    for r in world.gt_rules:
        if r.fires(active[None])[0]:
            active[min(r.antecedents)] = False
    return active


def sample_dataset(world: World, n: int | None = None, seed: int = 0,
                   noiseless: bool | None = None) -> Dataset:
    """Draw ``n`` samples with a 1:4 positive-to-negative ratio.

    A positive satisfies some ground-truth rule of a chosen activity; a
    negative satisfies none (hard negatives hold all but one antecedent of
    some rule).  Labels always come from the Boolean rule oracle.
    """
    spec = world.spec
    n = spec.n_samples if n is None else n
    if n < 5:
        raise ContractError("need at least 5 samples")
    noiseless = spec.noiseless if noiseless is None else noiseless
    rng = stream(seed, "dataset")
    p, A = len(world.primitives), len(world.activities)
    n_pos = int(round(n * spec.pos_fraction))
    rows = [_positive_active(world, rng, i % A) for i in range(n_pos)]
    rows += [_negative_active(world, rng) for _ in range(n - n_pos)]
    order = rng.permutation(n)
    active = np.stack(rows)[order]
    labels = world.oracle(active)

    det = stream(seed, "dataset", "detector")
    if noiseless:
        s_pri = active.astype(np.float64)
    else:
        tp = det.beta(*spec.tp_beta, size=(n, p))
        fp = det.beta(*spec.fp_beta, size=(n, p))
        s_pri = np.where(active, tp, fp)
    if spec.relevance_primitives:
        idx = list(spec.relevance_primitives)
        s_pri[:, idx] *= spec.relevance_scale
    inst_rng = stream(seed, "dataset", "instance")
    s_inst = np.where(labels > 0, inst_rng.beta(*spec.inst_pos_beta, size=(n, A)),
                      inst_rng.beta(*spec.inst_neg_beta, size=(n, A)))
    visual = None
    if world.visual_templates is not None:
        vis_rng = stream(seed, "dataset", "visual")
        noise = vis_rng.standard_normal((n, p, spec.visual_dim)) * spec.visual_noise
        visual = active[:, :, None] * world.visual_templates[None] + noise
    n_test = int(round(n * spec.test_fraction))
    split = np.array(["train"] * n, dtype=object)
    split[stream(seed, "dataset", "split").permutation(n)[:n_test]] = "test"
    ids = [f"s{i:06d}" for i in range(n)]
    return Dataset(ids, split.astype(str), s_pri, s_inst, labels,
                   active.astype(np.int8), visual)


def inject_label_noise(dataset: Dataset, mr: float, seed: int = 0) -> Dataset:
    """Replace every primitive probability of ``floor(n * mr)`` random samples
    with Uniform(0, 1) draws.  For one seed, the replaced sets are nested in ``mr``."""
    if not 0.0 <= mr <= 1.0:
        raise ContractError(f"mr must lie in [0, 1], got {mr}")
    n = len(dataset)
    rng = stream(seed, "label-noise")
    order = rng.permutation(n)
    uniform = rng.random(dataset.s_pri.shape)
    k = int(math.floor(n * mr + 1e-9))
    s_pri = dataset.s_pri.copy()
    chosen = order[:k]
    s_pri[chosen] = uniform[chosen]
    return replace(dataset, s_pri=s_pri, mr=mr)


NOISE_SWEEP = (0.0, 0.005, 0.01, 0.05, 0.1, 0.2, 0.5)
