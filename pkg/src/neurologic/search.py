"""Label-aware rule search: an upper bound on what the frozen model can reach
if every (sample, activity) cell could pick its own rule."""
from __future__ import annotations

from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .datagen import Dataset
from .engine import ReasoningModel, rule_scores
from .metrics import mean_ap
from .rng import stream
from .rulebase import (EmptyClassError, Rule, cooccurrence_prior, format_rule,
                       perturbed_generator, sample_rules)


def search_sampler(prior: np.ndarray | None, activity: int, n: int, rng: np.random.Generator,
                   p: int, max_uniform_size: int = 4) -> list[Rule]:
    """``n`` rules: half from perturbed co-occurrence generators, half uniform
    sets of 1 to ``max_uniform_size`` primitives.  Without a prior all are uniform."""
    rules = []
    for _ in range(n):
        if prior is not None and rng.random() < 0.5:
            gen = perturbed_generator(prior, 0.1 * int(rng.integers(0, 11)), rng, activity)
            rules.extend(sample_rules(gen, 1, rng))
        else:
            size = int(rng.integers(1, max_uniform_size + 1))
            ants = rng.choice(p, size=min(size, p), replace=False)
            rules.append(Rule(activity, frozenset(ants.tolist()), "searched"))
    return [Rule(r.activity, r.antecedents, "searched") for r in rules]


@dataclass
class SearchResult:
    k: int
    mAP: float
    ap: list[float | None]
    predictions: np.ndarray
    distances: np.ndarray
    histogram: dict[int, list[tuple[str, int]]]

    def report(self) -> dict:
        return {"K": self.k, "mAP": self.mAP, "per_activity_AP": self.ap,
                "selected_rule_histogram": {str(m): [[r, c] for r, c in h]
                                            for m, h in self.histogram.items()}}


def rule_search(model: ReasoningModel, dataset: Dataset, ks, seed: int = 0,
                prior_data: Dataset | None = None, include: dict[int, list[Rule]] | None = None,
                jobs: int = 1, top: int = 5) -> list[SearchResult]:
    """Search ``max(ks)`` sampled rules per activity and report every ``K`` in ``ks``.

    Rules are drawn once per activity and shared by that activity's cells,
    so the first ``K`` draws are a prefix of the first ``K' > K`` draws and
    each cell's best distance can only shrink as ``K`` grows.  ``include``
    forces given rules to the front of an activity's list.
    """
    ks = sorted(int(k) for k in ([ks] if np.isscalar(ks) else ks))
    if not ks or ks[0] < 1:
        raise ValueError("K must be >= 1")
    k_max = ks[-1]
    n, A = len(dataset), dataset.n_activities
    prior_src = prior_data if prior_data is not None else dataset
    y = dataset.labels.astype(np.float64)

    def run(m: int):
        try:
            prior = cooccurrence_prior(prior_src.s_pri, prior_src.labels, m)
        except EmptyClassError:
            prior = None
        forced = list((include or {}).get(m, []))
        drawn = search_sampler(prior, m, max(k_max - len(forced), 0), stream(seed, "search", m),
                               dataset.n_primitives, min(4, dataset.n_primitives))
        rules = (forced + drawn)[:k_max]
        uniq: dict = {}
        slot = np.array([uniq.setdefault(r.antecedents, len(uniq)) for r in rules])
        uniq_rules = [Rule(m, a, "searched") for a in uniq]
        scores = rule_scores(model, dataset.s_pri, uniq_rules, A)[:, slot]
        return rules, scores

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            per_activity = list(pool.map(run, range(A)))
    else:
        per_activity = [run(m) for m in range(A)]

    results = []
    for k in ks:
        pred = np.empty((n, A))
        dist = np.empty((n, A))
        hist = {}
        for m, (rules, scores) in enumerate(per_activity):
            d = (scores[:, :k] - y[:, [m]]) ** 2
            best = np.argmin(d, axis=1)
            pred[:, m] = scores[np.arange(n), best]
            dist[:, m] = d[np.arange(n), best]
            counts = Counter(best.tolist())
            hist[m] = [(format_rule(rules[j], model.primitives, model.activities), c)
                       for j, c in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:top]]
        mAP, ap = mean_ap(pred, dataset.labels)
        results.append(SearchResult(k, mAP, ap, pred, dist, hist))
    return results
