"""Learned NOT / OR operators, the truth discriminator and their evaluation."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .events import ActivityDictionary, DictionaryError, PrimitiveDictionary
from .numcore import (ContractError, MLPSpec, ParamSet, ShapeError, Tensor, as_tensor, broadcast_to,
                      concat, init_mlp, mlp_apply, no_grad, reshape, square, take)
from .rulebase import Rule


class InsufficientSampleError(ValueError):
    """The event sample has no True or no False events under the threshold."""


@dataclass
class LogicOps:
    """NOT, OR and the discriminator, shared by every event and rule."""

    params: ParamSet
    d: int
    calls: Counter = field(default_factory=Counter, repr=False)

    @property
    def not_spec(self) -> MLPSpec:
        return MLPSpec("logic.not", (self.d, 2 * self.d, self.d))

    @property
    def or_spec(self) -> MLPSpec:
        return MLPSpec("logic.or", (2 * self.d, 2 * self.d, self.d))

    @property
    def judge_spec(self) -> MLPSpec:
        return MLPSpec("logic.judge", (self.d, self.d, 1), out="sigmoid")

    @classmethod
    def create(cls, params: ParamSet, d: int, rng: np.random.Generator,
               zero_judge: bool = False) -> "LogicOps":
        ops = cls(params, d)
        init_mlp(params, ops.not_spec, rng)
        init_mlp(params, ops.or_spec, rng)
        init_mlp(params, ops.judge_spec, rng, zero=zero_judge)
        return ops

    def _check(self, e: Tensor) -> None:
        if e.shape[-1] != self.d:
            raise ShapeError(f"event width {e.shape[-1]} != {self.d}")

    def not_op(self, e) -> Tensor:
        e = as_tensor(e)
        self._check(e)
        self.calls["not"] += 1
        return mlp_apply(self.params, self.not_spec, e)

    def or_op(self, e1, e2) -> Tensor:
        e1, e2 = as_tensor(e1), as_tensor(e2)
        self._check(e1)
        self._check(e2)
        self.calls["or"] += 1
        if e1.shape[:-1] != e2.shape[:-1]:
            lead = np.broadcast_shapes(e1.shape[:-1], e2.shape[:-1])
            e1 = broadcast_to(e1, lead + (self.d,))
            e2 = broadcast_to(e2, lead + (self.d,))
        return mlp_apply(self.params, self.or_spec, concat([e1, e2], axis=-1))

    def judge(self, e) -> Tensor:
        """Probability that each event is True; drops the event axis."""
        e = as_tensor(e)
        self._check(e)
        out = mlp_apply(self.params, self.judge_spec, e)
        return reshape(out, e.shape[:-1])

    def judge_np(self, e: np.ndarray) -> np.ndarray:
        with no_grad():
            return self.judge(e).data


# -- rules as expressions ---------------------------------------------------------

@dataclass(frozen=True)
class CompiledRule:
    """CNF slot layout ``(¬a) ∨ (¬b) ∨ ... ∨ A_m``, antecedents ascending."""

    antecedents: tuple[int, ...]
    activity: int

    def slots(self) -> list[str]:
        return [f"¬{a}" for a in self.antecedents] + [f"A{self.activity}"]

    def expression(self, primitive_names: Sequence[str] | None = None,
                   activity_name: str | None = None) -> str:
        name = (lambda i: primitive_names[i]) if primitive_names else str
        expr = f"NOT({name(self.antecedents[0])})"
        for a in self.antecedents[1:]:
            expr = f"OR({expr}, NOT({name(a)}))"
        return f"OR({expr}, {activity_name or f'A{self.activity}'})"


def compile_rule(rule: Rule, primitives: PrimitiveDictionary,
                 activities: ActivityDictionary) -> CompiledRule:
    for a in rule.antecedents:
        if not 0 <= a < len(primitives):
            raise DictionaryError(f"unknown primitive id {a}")
    if not 0 <= rule.activity < len(activities):
        raise DictionaryError(f"unknown activity id {rule.activity}")
    if not rule.antecedents:
        raise ContractError("a rule needs at least one antecedent")
    return CompiledRule(tuple(sorted(rule.antecedents)), rule.activity)


def eval_rule(ops: LogicOps, compiled: CompiledRule, primitive_events,
              activity_event, intermediates: list | None = None) -> Tensor:
    """Vote vector of one rule: left fold of OR over NOT(e') then the activity.

    ``primitive_events`` maps primitive id to its mixed event (or is an
    array indexed by id along axis -2).  Intermediate OR outputs are appended
    to ``intermediates`` when given.
    """
    def slot(i):
        if isinstance(primitive_events, Mapping):
            if i not in primitive_events:
                raise ContractError(f"no event supplied for primitive {i}")
            return as_tensor(primitive_events[i])
        events = as_tensor(primitive_events)
        if i >= events.shape[-2]:
            raise ContractError(f"no event supplied for primitive {i}")
        return take(events, [i], axis=-2).reshape(events.shape[:-2] + (events.shape[-1],))

    if activity_event is None:
        raise ContractError("activity event missing")
    acc = ops.not_op(slot(compiled.antecedents[0]))
    for a in compiled.antecedents[1:]:
        acc = ops.or_op(acc, ops.not_op(slot(a)))
        if intermediates is not None:
            intermediates.append(acc)
    return ops.or_op(acc, activity_event)


# -- logic-law regulariser ----------------------------------------------------------

LAWS = ("negation", "double negation", "idempotence", "complementation")


def law_terms(ops: LogicOps, x) -> list[tuple[Tensor, Tensor]]:
    """The (a, b) probability pairs of the four laws for events ``x``."""
    x = as_tensor(x)
    jx = ops.judge(x)
    nx = ops.not_op(x)
    return [
        (ops.judge(nx), 1.0 - jx),
        (ops.judge(ops.not_op(nx)), jx),
        (ops.judge(ops.or_op(x, x)), jx),
        (ops.judge(ops.or_op(x, nx)), Tensor(np.ones(jx.shape))),
    ]


def logic_law_loss(ops: LogicOps, events, reduction: str = "sum") -> Tensor:
    """Sum over the four laws of squared gaps, summed (or averaged) over events."""
    x = as_tensor(events)
    if x.ndim == 1:
        x = reshape(x, (1, x.shape[0]))
    if x.shape[0] == 0:
        raise ContractError("logic-law loss needs at least one event")
    total = None
    for a, b in law_terms(ops, x):
        term = square(a - b).sum()
        total = term if total is None else total + term
    if reduction == "mean":
        total = total * (1.0 / x.shape[0])
    elif reduction != "sum":
        raise ContractError(f"unknown reduction {reduction!r}")
    return total


# -- expression accuracy -------------------------------------------------------------

EXPRESSIONS = (
    "x ≠ ¬x", "x = ¬¬x", "x ∨ x = x", "x ∨ ¬x = T",
    "T ∨ T = T", "T ∨ F = T", "F ∨ T = T", "F ∨ F = F",
    "T ∨ T ∨ T = T", "T ∨ T ∨ F = T", "T ∨ F ∨ F = T", "F ∨ F ∨ F = F",
)

# Reference accuracies reported for the full-scale model, keyed like EXPRESSIONS.
REFERENCE_ACCURACY = dict(zip(EXPRESSIONS, (
    0.9411, 0.9426, 0.8854, 0.9425, 0.9870, 0.9960, 0.9990, 0.7950,
    0.9870, 0.9940, 0.9790, 0.7180,
)))


def truth_pools(judged: np.ndarray, t_l: float) -> tuple[np.ndarray, np.ndarray]:
    """Indices judged True (``> t_l``) and False (``< 1 - t_l``)."""
    if not 0.5 <= t_l < 1:
        raise ContractError(f"t_l must lie in [0.5, 1), got {t_l}")
    true_idx = np.flatnonzero(judged > t_l)
    false_idx = np.flatnonzero(judged < 1.0 - t_l)
    return true_idx, false_idx


def expression_accuracy(ops: LogicOps, events: np.ndarray, t_l: float = 0.8,
                        rng: np.random.Generator | None = None,
                        n_tuples: int | None = None, anchor: str = "extreme",
                        batch_size: int = 50) -> dict[str, float]:
    """Fraction of sampled tuples for which each expression holds.

    Events judged above ``t_l`` form the True pool and those below
    ``1 - t_l`` the False pool; ``x`` expressions run over both pools.
    With ``anchor="extreme"`` the events are shuffled into batches of
    ``batch_size`` and each batch contributes one tuple whose T is its most
    and F its least true event.  ``anchor="pool"`` draws ``n_tuples`` random
    T/F tuples from the pools instead.  A composed vector counts as True
    when its judge exceeds 0.5.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    events = np.asarray(events, dtype=np.float64)
    judged = ops.judge_np(events)
    true_idx, false_idx = truth_pools(judged, t_l)
    if len(true_idx) == 0 or len(false_idx) == 0:
        raise InsufficientSampleError(
            f"need True and False events under t_l={t_l}: "
            f"{len(true_idx)} True, {len(false_idx)} False of {len(events)}")
    if anchor == "extreme":
        if batch_size < 2:
            raise ContractError("batch_size must be >= 2")
        order = rng.permutation(len(events))
        batches = [order[i:i + batch_size] for i in range(0, len(order) - batch_size + 1, batch_size)]
        batches = batches or [order]
        T = events[[b[np.argmax(judged[b])] for b in batches]]
        F = events[[b[np.argmin(judged[b])] for b in batches]]
        draw = lambda pool: pool  # noqa: E731
    elif anchor == "pool":
        n = n_tuples or len(events)
        T, F = events[true_idx], events[false_idx]
        draw = lambda pool: pool[rng.integers(0, len(pool), size=n)]  # noqa: E731
    else:
        raise ContractError(f"unknown anchor {anchor!r}")

    x_idx = np.concatenate([true_idx, false_idx])
    x = events[x_idx]
    x_true = judged[x_idx] > 0.5

    def truth(v) -> np.ndarray:
        return ops.judge(v).data > 0.5

    def OR(*vs):
        acc = vs[0]
        for v in vs[1:]:
            acc = ops.or_op(acc, v)
        return acc

    out: dict[str, float] = {}
    with no_grad():
        nx = ops.not_op(x)
        out["x ≠ ¬x"] = float(np.mean(truth(nx) != x_true))
        out["x = ¬¬x"] = float(np.mean(truth(ops.not_op(nx)) == x_true))
        out["x ∨ x = x"] = float(np.mean(truth(ops.or_op(x, x)) == x_true))
        out["x ∨ ¬x = T"] = float(np.mean(truth(ops.or_op(x, nx))))
        for label in EXPRESSIONS[4:]:
            lhs, rhs = label.split(" = ")
            operands = [T if tok == "T" else F for tok in lhs.split(" ∨ ")]
            hit = truth(OR(*[draw(pool) for pool in operands]))
            out[label] = float(np.mean(hit if rhs == "T" else ~hit))
    return out


def commutativity_gap(ops: LogicOps, events: np.ndarray, rng: np.random.Generator,
                      n_pairs: int = 1000) -> float:
    """Mean |J(a ∨ b) - J(b ∨ a)| over random event pairs (diagnostic only)."""
    events = np.asarray(events, dtype=np.float64)
    i = rng.integers(0, len(events), size=n_pairs)
    j = rng.integers(0, len(events), size=n_pairs)
    with no_grad():
        ab = ops.judge(ops.or_op(events[i], events[j])).data
        ba = ops.judge(ops.or_op(events[j], events[i])).data
    return float(np.mean(np.abs(ab - ba)))


def ambiguous_fraction(judged: np.ndarray, lo: float = 0.2, hi: float = 0.8) -> float:
    judged = np.asarray(judged)
    return float(np.mean((judged > lo) & (judged < hi)))
