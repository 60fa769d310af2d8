import numpy as np
import pytest

from neurologic.engine import rule_scores
from neurologic.rulebase import Rule
from neurologic.search import rule_search, search_sampler


class TestSampler:
    def test_uniform_without_prior(self):
        rules = search_sampler(None, 1, 200, np.random.default_rng(0), 6, 4)
        assert len(rules) == 200
        assert all(r.activity == 1 and r.provenance == "searched" for r in rules)
        assert {len(r.antecedents) for r in rules} == {1, 2, 3, 4}

    def test_deterministic(self):
        prior = np.linspace(0, 1, 8)
        a = search_sampler(prior, 0, 50, np.random.default_rng(3), 8)
        b = search_sampler(prior, 0, 50, np.random.default_rng(3), 8)
        assert a == b


@pytest.fixture(scope="module")
def results(tiny):
    return rule_search(tiny.model, tiny.data.part("test"), [1, 10, 50], seed=2)


class TestRuleSearch:
    def test_distance_non_increasing(self, results):
        for small, big in zip(results, results[1:]):
            assert np.all(big.distances <= small.distances)

    def test_map_non_decreasing(self, results):
        maps = [r.mAP for r in results]
        assert maps == sorted(maps)

    def test_deterministic(self, tiny, results):
        again = rule_search(tiny.model, tiny.data.part("test"), [1, 10, 50], seed=2, jobs=2)
        for a, b in zip(results, again):
            assert a.mAP == b.mAP
            np.testing.assert_array_equal(a.predictions, b.predictions)
            assert a.histogram == b.histogram

    def test_forced_rule_at_k1(self, tiny):
        test = tiny.data.part("test")
        forced = {m: [tiny.world.rules_of(m)[0]] for m in range(3)}
        res = rule_search(tiny.model, test, 1, seed=0, include=forced)[0]
        want = rule_scores(tiny.model, test.s_pri, [forced[m][0] for m in range(3)], 3)
        np.testing.assert_allclose(res.predictions, want, rtol=0, atol=1e-12)

    def test_report_histogram(self, results):
        rep = results[-1].report()
        assert rep["K"] == 50
        assert all(sum(c for _, c in h) <= 90 for h in rep["selected_rule_histogram"].values())

    def test_bad_k(self, tiny):
        with pytest.raises(ValueError):
            rule_search(tiny.model, tiny.data, [0])


def test_rule_type_kept():
    assert Rule(0, frozenset({1}), "searched").provenance == "searched"
