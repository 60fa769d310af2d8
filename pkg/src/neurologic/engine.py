"""End-to-end reasoning: rule votes, rule combination, loss, training and inference."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import numcore as nc
from .config import ModelConfig, TrainConfig
from .datagen import Dataset
from .events import ActivityDictionary, PrimitiveDictionary, embed_dictionary, mix_expectation, project_event
from .logic import InsufficientSampleError, LogicOps, compile_rule, logic_law_loss
from .metrics import average_precision, mean_ap
from .numcore import MLPSpec, ParamSet, Tensor, no_grad
from .rng import stream
from .rulebase import (EmptyClassError, Rule, RuleBase, cooccurrence_prior, format_rule,
                       generated_candidates, harvest_annotation_rules, update_rules)

log = logging.getLogger(__name__)

_EPS = 1e-7
_MASKED = -1e9


class ModeUnavailableError(ValueError):
    """The requested inference mode needs inputs the sample does not have."""


class TrainingDiverged(nc.NumericError):
    def __init__(self, message: str, last_good: dict, rulebase: RuleBase, history: list):
        super().__init__(message)
        self.last_good = last_good
        self.rulebase = rulebase
        self.history = history


class ReasoningModel:
    """All trainable parts of the reasoning module around shared logic operators."""

    def __init__(self, params: ParamSet, primitives: PrimitiveDictionary,
                 activities: ActivityDictionary, cfg: ModelConfig, visual_dim: int = 0):
        cfg.validate()
        self.params = params
        self.primitives = primitives
        self.activities = activities
        self.cfg = cfg
        self.visual_dim = visual_dim
        self.combination = "late"
        d, D = cfg.event_dim, cfg.raw_dim
        self.ops = LogicOps(params, d)
        self.raw_pri = embed_dictionary(primitives, D, cfg.embed_seed)
        self.raw_act = embed_dictionary(activities, D, cfg.embed_seed)
        self.proj_pri = MLPSpec("proj.pri", (D, d))
        self.proj_act = MLPSpec("proj.act", (D, d))
        self.agg = MLPSpec("early.agg", (cfg.l0 * d, 2 * d, d))
        self.early_judge = MLPSpec("early.judge", (d, d, 1), out="sigmoid")
        self.proj_vis = MLPSpec("proj.vis", (max(visual_dim, 1), d))
        self.perceptual = MLPSpec("perceptual.mlp", (d, d, len(activities)), out="sigmoid")

    @property
    def d(self) -> int:
        return self.cfg.event_dim

    @property
    def head_width(self) -> int:
        return self.d // self.cfg.heads

    @classmethod
    def create(cls, primitives: PrimitiveDictionary, activities: ActivityDictionary,
               cfg: ModelConfig, seed: int, visual_dim: int = 0) -> "ReasoningModel":
        params = ParamSet()
        model = cls(params, primitives, activities, cfg, visual_dim)
        rng = stream(seed, "model-init")
        LogicOps.create(params, cfg.event_dim, rng)
        for spec in (model.proj_pri, model.proj_act, model.agg, model.early_judge):
            nc.init_mlp(params, spec, rng)
        d = cfg.event_dim
        for h in range(cfg.heads):
            params.add(f"att.q{h}", nc.glorot_uniform(rng, d, d))
            params.add(f"att.k{h}", nc.glorot_uniform(rng, d, d))
            params.add(f"att.v{h}", nc.glorot_uniform(rng, d, model.head_width))
        if cfg.perceptual:
            if visual_dim < 1:
                raise ModeUnavailableError("perceptual head needs visual inputs")
            nc.init_mlp(params, model.proj_vis, rng)
            nc.init_mlp(params, model.perceptual, rng)
        return model

    # -- checkpoints ----------------------------------------------------------------------
    def meta(self) -> dict:
        return {"model": vars(self.cfg).copy(), "visual_dim": self.visual_dim,
                "combination": self.combination,
                "primitives": self.primitives.to_json(), "activities": self.activities.to_json()}

    def save(self, path, rulebase: RuleBase | None = None, extra: dict | None = None) -> None:
        meta = self.meta()
        if rulebase is not None:
            meta["l0"] = rulebase.l0
            meta["rules"] = [format_rule(r, self.primitives, self.activities)
                             for r in rulebase.all_selected()]
        if extra:
            meta.update(extra)
        nc.save(path, self.params, meta)

    @classmethod
    def load(cls, path) -> tuple["ReasoningModel", dict]:
        params, meta = nc.load(path)
        model = cls(params, PrimitiveDictionary.from_json(meta["primitives"]),
                    ActivityDictionary.from_json(meta["activities"]),
                    ModelConfig(**meta["model"]), int(meta.get("visual_dim", 0)))
        model.combination = meta.get("combination", "late")
        return model, meta

    # -- events -----------------------------------------------------------------------------
    def primitive_events(self) -> Tensor:
        return project_event(self.params, self.proj_pri, self.raw_pri)

    def activity_events(self) -> Tensor:
        return project_event(self.params, self.proj_act, self.raw_act)

    def mixed_events(self, s_pri: np.ndarray) -> Tensor:
        """Expected linguistic event of every primitive per sample, ``(B, p, d)``."""
        e = self.primitive_events()
        return mix_expectation(e, self.ops.not_op(e), s_pri)


# -- rule layout ---------------------------------------------------------------------------

@dataclass
class RuleLayout:
    """Index arrays that evaluate a list of rules in one batched pass."""

    rules: list[Rule]
    n_activities: int
    l0: int
    activity: np.ndarray = field(init=False)
    groups: list[tuple[np.ndarray, np.ndarray]] = field(init=False)
    inverse: np.ndarray = field(init=False)
    late_weights: np.ndarray = field(init=False)
    slot_index: np.ndarray = field(init=False)
    slot_mask: np.ndarray = field(init=False)
    missing: list[int] = field(init=False)

    def __post_init__(self):
        R = len(self.rules)
        self.activity = np.array([r.activity for r in self.rules], dtype=np.intp)
        ants = [tuple(sorted(r.antecedents)) for r in self.rules]
        by_len: dict[int, list[int]] = {}
        for i, a in enumerate(ants):
            by_len.setdefault(len(a), []).append(i)
        self.groups = []
        order = []
        for L in sorted(by_len):
            idx = np.array(by_len[L], dtype=np.intp)
            self.groups.append((idx, np.array([ants[i] for i in idx], dtype=np.intp)))
            order.extend(idx.tolist())
        self.inverse = np.argsort(np.array(order, dtype=np.intp)) if R else np.zeros(0, np.intp)
        counts = np.bincount(self.activity, minlength=self.n_activities) if R else np.zeros(self.n_activities, int)
        self.missing = [m for m in range(self.n_activities) if counts[m] == 0]
        W = np.zeros((R, self.n_activities))
        for i, m in enumerate(self.activity):
            W[i, m] = 1.0 / counts[m]
        self.late_weights = W
        self.slot_index = np.full((self.n_activities, self.l0), R, dtype=np.intp)
        self.slot_mask = np.zeros((self.n_activities, self.l0), dtype=bool)
        fill = np.zeros(self.n_activities, dtype=int)
        for i, m in enumerate(self.activity):
            if fill[m] >= self.l0:
                raise nc.ContractError(f"activity {m} has more than l0={self.l0} rules")
            self.slot_index[m, fill[m]] = i
            self.slot_mask[m, fill[m]] = True
            fill[m] += 1

    @classmethod
    def of(cls, rulebase: RuleBase) -> "RuleLayout":
        return cls(rulebase.all_selected(), rulebase.n_activities, rulebase.l0)

    def valid_activities(self) -> np.ndarray:
        mask = np.ones(self.n_activities, dtype=bool)
        mask[self.missing] = False
        return mask


@dataclass
class Forward:
    prim_events: Tensor
    act_events: Tensor
    votes: Tensor
    scores: Tensor
    intermediates: list[Tensor]
    attention: list[np.ndarray] = field(default_factory=list)


def forward_votes(model: ReasoningModel, s_pri: np.ndarray, layout: RuleLayout) -> Forward:
    """Vote vectors ``(B, R, d)`` and per-rule scores ``(B, R)`` for a batch."""
    ops = model.ops
    s_pri = np.asarray(s_pri, dtype=np.float64)
    prim = model.mixed_events(s_pri)
    acts = model.activity_events()
    B = s_pri.shape[0]
    negated = ops.not_op(prim)
    parts, inter = [], []
    for idx, ants in layout.groups:
        acc = nc.take(negated, ants[:, 0], axis=1)
        for k in range(1, ants.shape[1]):
            acc = ops.or_op(acc, nc.take(negated, ants[:, k], axis=1))
            inter.append(acc)
        act = nc.broadcast_to(nc.take(acts, layout.activity[idx], axis=0), (B, len(idx), model.d))
        parts.append(ops.or_op(acc, act))
    if parts:
        votes = nc.take(nc.concat(parts, axis=1), layout.inverse, axis=1)
    else:
        votes = Tensor(np.zeros((B, 0, model.d)))
    return Forward(prim, acts, votes, ops.judge(votes) if parts else Tensor(np.zeros((B, 0))), inter)


def combine_late(rule_scores) -> float | np.ndarray:
    """Average of per-rule probabilities (last axis)."""
    s = np.asarray(rule_scores, dtype=np.float64)
    if s.shape[-1] == 0:
        raise nc.ContractError("late combination needs at least one rule score")
    return s.mean(axis=-1)


def late_scores(fw: Forward, layout: RuleLayout) -> Tensor:
    return nc.matmul(fw.scores, layout.late_weights)


def attention_weights(model: ReasoningModel, x: Tensor, mask: np.ndarray) -> list[Tensor]:
    """Per-head softmax weights ``(..., L, L)`` over unmasked rule slots."""
    bias = np.where(mask, 0.0, _MASKED)[..., None, :]
    scale = 1.0 / math.sqrt(model.d)
    out = []
    for h in range(model.cfg.heads):
        q = nc.matmul(x, model.params[f"att.q{h}"])
        k = nc.matmul(x, model.params[f"att.k{h}"])
        out.append(nc.softmax(nc.matmul(q, nc.swap_last(k)) * scale + bias, axis=-1))
    return out


def combine_early(model: ReasoningModel, votes: Tensor, mask: np.ndarray,
                  keep: list | None = None) -> Tensor:
    """Attention-reweighted vote vectors, concatenated, aggregated and judged.

    ``votes`` is ``(..., l0, d)`` with ``mask`` marking real rule slots.
    """
    if votes.shape[-1] != model.d or votes.shape[-2] != model.cfg.l0:
        raise nc.ShapeError(f"expected (..., {model.cfg.l0}, {model.d}) votes, got {votes.shape}")
    heads = []
    for h, att in enumerate(attention_weights(model, votes, mask)):
        if keep is not None:
            keep.append(att.data)
        heads.append(nc.matmul(att, nc.matmul(votes, model.params[f"att.v{h}"])))
    mixed = nc.concat(heads, axis=-1) * mask[..., None].astype(np.float64)
    flat = mixed.reshape(votes.shape[:-2] + (model.cfg.l0 * model.d,))
    agg = nc.mlp_apply(model.params, model.agg, flat)
    out = nc.mlp_apply(model.params, model.early_judge, agg)
    return out.reshape(out.shape[:-1])


def early_scores(model: ReasoningModel, fw: Forward, layout: RuleLayout) -> Tensor:
    B = fw.votes.shape[0]
    padded = nc.concat([fw.votes, Tensor(np.zeros((B, 1, model.d)))], axis=1)
    slots = nc.take(padded, layout.slot_index.reshape(-1), axis=1)
    slots = slots.reshape((B, layout.n_activities, layout.l0, model.d))
    return combine_early(model, slots, layout.slot_mask, fw.attention)


def activity_scores(model: ReasoningModel, fw: Forward, layout: RuleLayout,
                    combination: str | None = None) -> Tensor:
    combination = combination or model.combination
    if combination == "late":
        return late_scores(fw, layout)
    if combination == "early":
        return early_scores(model, fw, layout)
    raise nc.ContractError(f"unknown combination {combination!r}")


def perceptual_scores(model: ReasoningModel, visual) -> Tensor:
    """Activity probabilities from pooled visual primitive events, ``(B, A)``."""
    if visual is None or "perceptual.mlp.W0" not in model.params:
        raise ModeUnavailableError("perceptual scores need visual inputs and a perceptual head")
    visual = np.asarray(visual, dtype=np.float64)
    events = project_event(model.params, model.proj_vis, visual)  # visual events are not mixed
    pooled = events.mean(axis=-2)
    return nc.mlp_apply(model.params, model.perceptual, pooled)


def bce(p: Tensor, y: np.ndarray, mask: np.ndarray | None = None) -> Tensor:
    p = nc.clip(p, _EPS, 1.0 - _EPS)
    y = np.asarray(y, dtype=np.float64)
    ll = nc.log(p) * y + nc.log(1.0 - p) * (1.0 - y)
    if mask is None:
        return -ll.mean()
    w = np.broadcast_to(mask, y.shape).astype(np.float64)
    return -(ll * w).sum() * (1.0 / max(w.sum(), 1.0))


def event_sample(fw: Forward) -> Tensor:
    """Every event the logic modules touched in this batch, ``(N, d)``."""
    d = fw.votes.shape[-1]
    parts = [fw.prim_events.reshape((-1, d)), fw.act_events]
    parts += [t.reshape((-1, d)) for t in fw.intermediates]
    if fw.votes.shape[1]:
        parts.append(fw.votes.reshape((-1, d)))
    return nc.concat(parts, axis=0)


def reasoning_loss(model: ReasoningModel, batch: Dataset, layout: RuleLayout, alpha: float = 0.2,
                   combination: str | None = None, reg_reduction: str = "mean"
                   ) -> tuple[Tensor, dict[str, float]]:
    """``alpha * L_reg + L_cls`` (plus the perceptual BCE when that head exists)."""
    if len(batch) == 0:
        raise nc.ContractError("empty batch")
    fw = forward_votes(model, batch.s_pri, layout)
    scores = activity_scores(model, fw, layout, combination)
    l_cls = bce(scores, batch.labels, layout.valid_activities()[None, :])
    total = l_cls
    parts = {"L_cls": l_cls.item()}
    if alpha > 0:
        l_reg = logic_law_loss(model.ops, event_sample(fw), reduction=reg_reduction)
        total = total + l_reg * alpha
        parts["L_reg"] = l_reg.item()
    else:
        parts["L_reg"] = 0.0
    if "perceptual.mlp.W0" in model.params and batch.visual is not None:
        l_pr = bce(perceptual_scores(model, batch.visual), batch.labels)
        total = total + l_pr
        parts["L_PR"] = l_pr.item()
    return total, parts


# -- evaluation helpers -------------------------------------------------------------------------

def _chunks(n: int, size: int):
    for start in range(0, n, size):
        yield slice(start, min(n, start + size))


def rule_scores(model: ReasoningModel, s_pri: np.ndarray, rules: Sequence[Rule],
                n_activities: int | None = None, chunk: int = 64) -> np.ndarray:
    """Single-rule probabilities ``(n, R)``: judge of each rule's vote vector."""
    if not rules:
        return np.zeros((len(s_pri), 0))
    uniq: dict = {}
    for r in rules:
        compile_rule(r, model.primitives, model.activities)
    col = np.array([uniq.setdefault(r.key, len(uniq)) for r in rules], dtype=np.intp)
    first = {}
    for r in rules:
        first.setdefault(r.key, r)
    layout = RuleLayout(list(first.values()), n_activities or len(model.activities), max(len(first), 1))
    out = np.empty((len(s_pri), len(first)))
    with no_grad():
        for sl in _chunks(len(s_pri), chunk):
            out[sl] = forward_votes(model, s_pri[sl], layout).scores.data
    return out[:, col]


@dataclass
class PredictionRecord:
    s_lr: np.ndarray
    s_inst: np.ndarray
    fused: np.ndarray
    rule_scores: np.ndarray
    s_pr: np.ndarray | None = None
    missing: list[int] = field(default_factory=list)


def fuse(s_inst, s_lr, s_pr=None) -> np.ndarray:
    out = np.asarray(s_inst, dtype=np.float64) * np.asarray(s_lr, dtype=np.float64)
    if s_pr is not None:
        out = out * np.asarray(s_pr, dtype=np.float64)
    return out


def infer(model: ReasoningModel, dataset: Dataset, rulebase: RuleBase, mode: str = "fused",
          combination: str | None = None, chunk: int = 64) -> PredictionRecord:
    """Scores for every sample; ``mode`` is ``lr``, ``fused`` or ``fused+perceptual``."""
    if mode not in ("lr", "fused", "fused+perceptual"):
        raise nc.ContractError(f"unknown mode {mode!r}")
    layout = RuleLayout.of(rulebase)
    n, A = len(dataset), rulebase.n_activities
    s_lr = np.empty((n, A))
    per_rule = np.empty((n, len(layout.rules)))
    s_pr = None
    if mode == "fused+perceptual":
        if dataset.visual is None:
            raise ModeUnavailableError("dataset has no visual inputs")
        s_pr = np.empty((n, A))
    with no_grad():
        for sl in _chunks(n, chunk):
            fw = forward_votes(model, dataset.s_pri[sl], layout)
            s_lr[sl] = activity_scores(model, fw, layout, combination).data
            per_rule[sl] = fw.scores.data
            if s_pr is not None:
                s_pr[sl] = perceptual_scores(model, dataset.visual[sl]).data
    s_lr[:, layout.missing] = np.nan
    if mode == "lr":
        fused = s_lr.copy()
    else:
        fused = fuse(dataset.s_inst, s_lr, s_pr)
    return PredictionRecord(s_lr, dataset.s_inst, fused, per_rule, s_pr, list(layout.missing))


def evaluate(model: ReasoningModel, dataset: Dataset, rulebase: RuleBase, mode: str = "fused",
             combination: str | None = None) -> dict:
    rec = infer(model, dataset, rulebase, mode, combination)
    m, per = mean_ap(rec.fused, dataset.labels)
    return {"mAP": m, "AP": per, "skipped": [i for i, a in enumerate(per) if a is None],
            "missing_rules": rec.missing}


def logic_event_sample(model: ReasoningModel, dataset: Dataset, rulebase: RuleBase, n: int,
                       rng: np.random.Generator, chunk: int = 64) -> np.ndarray:
    """``n`` event vectors drawn uniformly from the dataset's mixed primitive
    events, the activity events and the rule vote vectors.  Raises
    ``InsufficientSampleError`` when fewer than ``n`` exist."""
    layout = RuleLayout.of(rulebase)
    parts = []
    with no_grad():
        parts.append(model.activity_events().data)
        for sl in _chunks(len(dataset), chunk):
            fw = forward_votes(model, dataset.s_pri[sl], layout)
            parts.append(fw.prim_events.data.reshape(-1, model.d))
            parts.append(fw.votes.data.reshape(-1, model.d))
    pool = np.concatenate(parts)
    if len(pool) < n:
        raise InsufficientSampleError(f"requested {n} events but only {len(pool)} exist")
    return pool[np.sort(rng.choice(len(pool), size=n, replace=False))]


def ambient_sample(events: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Isotropic Gaussian vectors at the overall scale of ``events``."""
    return rng.standard_normal((n, events.shape[1])) * float(np.std(events))


# -- rule evaluation for the update policy ----------------------------------------------------

def per_rule_losses(model: ReasoningModel, dataset: Dataset, rules: Sequence[Rule],
                    selection: str = "loss") -> np.ndarray:
    """Mean BCE of each single-rule score against its activity label
    (or ``1 - AP`` when ``selection == "map"``)."""
    if not rules:
        return np.zeros(0)
    scores = rule_scores(model, dataset.s_pri, rules, len(model.activities))
    y = dataset.labels[:, [r.activity for r in rules]].astype(np.float64)
    if selection == "map":
        out = []
        for j in range(len(rules)):
            out.append(1.0 - average_precision(scores[:, j], y[:, j]) if y[:, j].any() else 1.0)
        return np.asarray(out)
    p = np.clip(scores, _EPS, 1 - _EPS)
    return -(y * np.log(p) + (1 - y) * np.log(1 - p)).mean(axis=0)


def build_candidates(rulebase: RuleBase, dataset: Dataset, seed: int, n_annotation: int = 55,
                     per_generator: int = 5) -> RuleBase:
    """Fill each activity's candidate pool from annotated samples and
    from the perturbed co-occurrence generators."""
    base = rulebase.copy()
    for m in range(base.n_activities):
        try:
            harvested = harvest_annotation_rules(dataset.s_pri, dataset.labels, m, n_annotation,
                                                 stream(seed, "harvest", m))
            prior = cooccurrence_prior(dataset.s_pri, dataset.labels, m)
        except EmptyClassError:
            log.warning("activity %d has no positive training samples; no candidates", m)
            continue
        generated = generated_candidates(prior, m, stream(seed, "generate", m),
                                         per_generator=per_generator) if per_generator else []
        for r in harvested + generated:
            base.add_candidate(r)
    return base


def rulebase_update_pass(model: ReasoningModel, dataset: Dataset, base: RuleBase,
                         selection: str = "loss", max_samples: int = 0,
                         rng: np.random.Generator | None = None) -> tuple[RuleBase, dict]:
    """Evaluate selected and candidate rules on ``dataset`` and apply one update.

    With ``max_samples > 0`` the losses use a random subset of that size."""
    if 0 < max_samples < len(dataset):
        rng = rng if rng is not None else np.random.default_rng(0)
        dataset = dataset.subset(np.sort(rng.choice(len(dataset), max_samples, replace=False)))
    sel = base.all_selected()
    cand = base.all_candidates()
    s_loss = per_rule_losses(model, dataset, sel, selection)
    c_loss = per_rule_losses(model, dataset, cand, selection)
    by_m_s = {m: [] for m in range(base.n_activities)}
    by_m_c = {m: [] for m in range(base.n_activities)}
    for r, x in zip(sel, s_loss):
        by_m_s[r.activity].append(float(x))
    for r, x in zip(cand, c_loss):
        by_m_c[r.activity].append(float(x))
    return update_rules(base, by_m_c, by_m_s)


# -- training ----------------------------------------------------------------------------

@dataclass
class TrainResult:
    model: ReasoningModel
    rulebase: RuleBase
    history: list[dict]


def _optimizer(cfg: TrainConfig) -> nc.OptimizerState:
    schedule = nc.CosineRestarts(cfg.lr, cfg.cosine_first_decay) if cfg.cosine_first_decay > 0 else None
    return nc.OptimizerState(kind=cfg.optimizer, lr=cfg.lr, momentum=cfg.momentum, schedule=schedule)


def _run_epoch(model, data: Dataset, layout, cfg: TrainConfig, opt, rng, combination):
    order = rng.permutation(len(data))
    sums = {"L_cls": 0.0, "L_reg": 0.0}
    batches = 0
    for sl in _chunks(len(order), cfg.batch_size):
        batch = data.subset(order[sl])
        model.params.zero_grad()
        loss, parts = reasoning_loss(model, batch, layout, cfg.alpha, combination, cfg.reg_reduction)
        if not math.isfinite(loss.item()):
            raise nc.NumericError("loss became non-finite")
        loss.backward()
        nc.opt_step(opt, model.params)
        for k in sums:
            sums[k] += parts[k]
        batches += 1
    return {k: v / max(batches, 1) for k, v in sums.items()}


def _describe(diff: dict, model: ReasoningModel) -> tuple[list[str], list[str]]:
    fmt = lambda r: format_rule(r, model.primitives, model.activities)  # noqa: E731
    added = [fmt(r) for m in sorted(diff) for r in diff[m]["added"]]
    removed = [fmt(r) for m in sorted(diff) for r in diff[m]["removed"]]
    return added, removed


def train(model: ReasoningModel, dataset: Dataset, rulebase: RuleBase, cfg: TrainConfig,
          seed: int = 0) -> TrainResult:
    """Late-combination training with per-epoch rule updates, then
    early-combination fine-tuning on the frozen rule base."""
    cfg.validate()
    train_ds = dataset.part("train") if "train" in set(dataset.split) else dataset
    if len(train_ds) == 0:
        raise nc.ContractError("empty training split")
    val_ds = dataset.part("test")
    if cfg.update_rules and not rulebase.all_candidates():
        rulebase = build_candidates(rulebase, train_ds, seed, cfg.candidate_annotation,
                                    cfg.candidate_generated_per_beta)
    opt = _optimizer(cfg)
    history: list[dict] = []
    last_good = model.params.snapshot()

    def val_map(combination):
        if len(val_ds) == 0:
            return None
        return evaluate(model, val_ds, rulebase, "lr", combination)["mAP"]

    def guarded(fn):
        nonlocal last_good
        try:
            out = fn()
        except nc.NumericError as exc:
            model.params.restore(last_good)
            raise TrainingDiverged(str(exc), last_good, rulebase, history) from exc
        last_good = model.params.snapshot()
        return out

    for epoch in range(cfg.epochs):
        layout = RuleLayout.of(rulebase)
        rng = stream(seed, "shuffle", "late", epoch)
        losses = guarded(lambda: _run_epoch(model, train_ds, layout, cfg, opt, rng, "late"))
        added, removed = [], []
        if cfg.update_rules:
            rulebase, diff = rulebase_update_pass(model, train_ds, rulebase, cfg.selection,
                                                  cfg.update_samples, stream(seed, "update", epoch))
            added, removed = _describe(diff, model)
        history.append({"phase": "late", "epoch": epoch, **losses, "val_mAP": val_map("late"),
                        "rules_added": added, "rules_removed": removed,
                        "rule_counts": rulebase.counts()})
        log.info("late epoch %d: L_cls=%.4f L_reg=%.4f +%d/-%d rules", epoch,
                 losses["L_cls"], losses["L_reg"], len(added), len(removed))

    frozen = rulebase.checksum()
    layout = RuleLayout.of(rulebase)
    for epoch in range(cfg.finetune_epochs):
        rng = stream(seed, "shuffle", "early", epoch)
        losses = guarded(lambda: _run_epoch(model, train_ds, layout, cfg, opt, rng, "early"))
        history.append({"phase": "early", "epoch": epoch, **losses, "val_mAP": val_map("early"),
                        "rules_added": [], "rules_removed": [], "rule_counts": rulebase.counts()})
        log.info("early epoch %d: L_cls=%.4f L_reg=%.4f", epoch, losses["L_cls"], losses["L_reg"])
    if cfg.finetune_epochs > 0:
        model.combination = "early"
    assert rulebase.checksum() == frozen
    return TrainResult(model, rulebase, history)


def initial_rulebase(rules: Sequence[Rule], n_activities: int, l0: int) -> RuleBase:
    return RuleBase.from_rules(rules, n_activities, l0)
