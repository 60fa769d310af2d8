import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import neurologic.numcore as nc
from neurologic.events import Activity, ActivityDictionary, DictionaryError, Primitive, PrimitiveDictionary
from neurologic.rulebase import (DegenerateGeneratorError, EmptyClassError, GeneratorProfile, Rule,
                                 RuleBase, RuleSyntaxError, aggregate_rules, bernoulli_kl,
                                 cooccurrence_counts, cooccurrence_prior, format_rule,
                                 generated_candidates, harvest_annotation_rules, min_max, npmi,
                                 npmi_from_probs, parse_rule, perturb, perturbed_generator,
                                 read_rule_file, sample_rules, update_rules, write_rule_file)


@pytest.fixture
def dicts():
    prims = PrimitiveDictionary([
        Primitive(0, "pasta", "hold", "hand", "sth"), Primitive(1, "object", object="cup"),
        Primitive(2, "pasta", "kick", "foot"), Primitive(3, "object", object="ball"),
    ])
    acts = ActivityDictionary([Activity(0, "drink_with", "cup"), Activity(1, "kick", "ball")])
    return prims, acts


def _base(selected_losses, l0, activity=0):
    base = RuleBase(1, l0)
    for i, loss in enumerate(selected_losses):
        base.add_selected(Rule(activity, frozenset({i})), loss)
    return base


class TestDSL:
    def test_parse(self, dicts):
        r = parse_rule("hand-hold-sth & cup -> drink_with_cup", *dicts)
        assert r.antecedents == {0, 1} and r.activity == 0

    def test_unicode_and_dedup(self, dicts):
        r = parse_rule("cup ∧ cup → drink_with_cup", *dicts)
        assert r.antecedents == {1}

    @pytest.mark.parametrize("text", ["-> drink_with_cup", "cup ->", "cup & -> kick_ball", "cup kick_ball"])
    def test_syntax_errors(self, dicts, text):
        with pytest.raises(RuleSyntaxError):
            parse_rule(text, *dicts)

    def test_unknown_phrase_named(self, dicts):
        with pytest.raises(DictionaryError, match="saucer"):
            parse_rule("saucer -> drink_with_cup", *dicts)

    def test_round_trip(self, dicts):
        for ants in ({0}, {1, 3}, {0, 1, 2, 3}):
            r = Rule(1, frozenset(ants))
            assert parse_rule(format_rule(r, *dicts), *dicts) == r

    def test_rule_file(self, dicts, tmp_path):
        rules = [Rule(0, frozenset({0, 1}), "annotation"), Rule(1, frozenset({2}), "generated")]
        path = write_rule_file(tmp_path / "r.txt", rules, *dicts, losses=[0.3, 0.1], header="two rules")
        text = path.read_text(encoding="utf-8")
        assert text.splitlines()[0] == "# two rules"
        back = read_rule_file(path, *dicts)
        assert back == rules
        assert [r.provenance for r in back] == ["annotation", "generated"]

    def test_rule_file_error_line(self, dicts, tmp_path):
        (tmp_path / "bad.txt").write_text("# c\ncup -> drink_with_cup\nmug -> drink_with_cup\n")
        with pytest.raises(DictionaryError, match=r"bad.txt:3"):
            read_rule_file(tmp_path / "bad.txt", *dicts)

    def test_empty_rule_rejected(self):
        with pytest.raises(nc.ContractError):
            Rule(0, frozenset())


class TestStatistics:
    def test_min_max(self):
        np.testing.assert_allclose(min_max(np.array([2.0, 5.0, 10.0])), [0, 0.375, 1])
        np.testing.assert_array_equal(min_max(np.array([3.0, 3.0])), [0.5, 0.5])

    def test_cooccurrence(self):
        s = np.array([[0.9, 0.1, 0.8], [0.7, 0.6, 0.2], [0.2, 0.9, 0.9], [0.9, 0.9, 0.9]])
        y = np.array([[1], [1], [0], [1]])
        np.testing.assert_array_equal(cooccurrence_counts(s, y, 0), [3, 2, 2])
        np.testing.assert_allclose(cooccurrence_prior(s, y, 0), [1, 0, 0])
        with pytest.raises(EmptyClassError):
            cooccurrence_prior(s, np.zeros((4, 1)), 0)

    def test_npmi_examples(self):
        assert npmi_from_probs(0.5, 0.4, 0.2) == pytest.approx(0.0, abs=1e-5)
        assert npmi_from_probs(0.5, 0.5, 0.5) == pytest.approx(1.0, abs=1e-5)
        a = npmi_from_probs(0.5, 0.5, 0.0, eps=1e-6)
        b = npmi_from_probs(0.5, 0.5, 0.0, eps=1e-9)
        assert -1 < b < a < -0.8

    def test_npmi_dataset_range(self):
        rng = np.random.default_rng(0)
        s = rng.random((200, 6))
        y = (rng.random((200, 3)) < 0.3).astype(int)
        v = npmi(s, y)
        assert v.shape == (6, 3)
        assert np.all((v >= -1) & (v <= 1))


class TestGenerators:
    def test_perturb_arithmetic(self):
        assert perturb(np.array([0.8]), 0.5, np.array([False]))[0] == pytest.approx(0.4)
        assert perturb(np.array([0.8]), 0.5, np.array([True]))[0] == pytest.approx(0.9)
        c = np.linspace(0, 1, 7)
        for branch in (True, False):
            np.testing.assert_array_equal(perturb(c, 0.0, np.full(7, branch)), c)

    def test_beta_range(self):
        with pytest.raises(nc.ContractError):
            perturbed_generator(np.full(3, 0.5), 1.2, np.random.default_rng(0))

    @pytest.mark.parametrize("branch", [True, False])
    def test_kl_monotone_in_beta(self, branch):
        c = np.round(np.arange(1, 10) * 0.1, 1)
        kls = np.stack([bernoulli_kl(c, perturb(c, b, np.full(9, branch)))
                        for b in np.linspace(0, 1, 11)[:-1]])
        assert np.all(np.diff(kls, axis=0) >= -1e-12)

    def test_all_ones(self):
        gen = GeneratorProfile(0, np.ones(4), 0.0, np.zeros(4, bool))
        assert all(r.antecedents == {0, 1, 2, 3} for r in sample_rules(gen, 10, np.random.default_rng(0)))

    def test_degenerate(self):
        gen = GeneratorProfile(0, np.zeros(4), 0.0, np.zeros(4, bool))
        with pytest.raises(DegenerateGeneratorError):
            sample_rules(gen, 1, np.random.default_rng(0))

    def test_default_schedule_55(self):
        prior = np.random.default_rng(1).random(12)
        a = generated_candidates(prior, 2, np.random.default_rng(5))
        b = generated_candidates(prior, 2, np.random.default_rng(5))
        assert len(a) == 55 and a == b
        assert all(r.activity == 2 and r.provenance == "generated" for r in a)

    def test_marginals(self):
        gen = perturbed_generator(np.array([0.1, 0.3, 0.5, 0.7, 0.9, 0.2]), 0.4, np.random.default_rng(2))
        rules = sample_rules(gen, 10_000, np.random.default_rng(3))
        freq = np.mean([r.vector(6) for r in rules], axis=0)
        # conditioning on a non-empty draw only matters when all c'' are tiny
        p_empty = np.prod(1 - gen.probs)
        np.testing.assert_allclose(freq, gen.probs / (1 - p_empty), atol=0.02)
        np.testing.assert_allclose(freq, gen.probs, atol=0.02)


class TestHarvest:
    def test_direct_conversion_and_dedup(self):
        s = np.array([[0.9, 0.1, 0.8], [0.9, 0.2, 0.7], [0.1, 0.9, 0.1], [0.9, 0.9, 0.9]])
        y = np.array([[1], [1], [0], [1]])
        rules = harvest_annotation_rules(s, y, 0, 10, np.random.default_rng(0))
        assert sorted(tuple(sorted(r.antecedents)) for r in rules) == [(0, 1, 2), (0, 2)]
        again = harvest_annotation_rules(s, y, 0, 10, np.random.default_rng(0))
        assert rules == again
        with pytest.raises(EmptyClassError):
            harvest_annotation_rules(s, np.zeros((4, 1)), 0, 3, np.random.default_rng(0))

    def test_aggregate_equal_intervals(self):
        rules = [Rule(0, frozenset(range(k))) for k in range(1, 9)]
        rules.append(Rule(0, frozenset({0})))  # duplicate
        picked = aggregate_rules(rules, 3, 8)
        assert len(picked) == 3 and len({r.key for r in picked}) == 3
        assert aggregate_rules(rules, 20, 8) == rules[:8]


class TestUpdatePolicy:
    def test_replace_worst(self):
        base = _base([0.5, 0.2], l0=2)
        base.add_candidate(Rule(0, frozenset({7})))
        new, diff = update_rules(base, {0: [0.3]}, {0: [0.5, 0.2]})
        assert new.losses[0] == [0.3, 0.2]
        assert new.selected[0][0].antecedents == {7}
        assert diff[0]["removed"][0].antecedents == {0}

    def test_no_change_when_worse(self):
        base = _base([0.5, 0.2], l0=2)
        base.add_candidate(Rule(0, frozenset({7})))
        new, diff = update_rules(base, {0: [0.6]}, {0: [0.5, 0.2]})
        assert new.losses[0] == [0.5, 0.2] and diff == {}
        assert new.checksum() == base.checksum()

    def test_append_below_capacity(self):
        base = _base([0.5], l0=3)
        base.add_candidate(Rule(0, frozenset({7})))
        new, _ = update_rules(base, {0: [0.1]}, {0: [0.5]})
        assert new.losses[0] == [0.5, 0.1] and len(new.rules(0)) == 2

    def test_bad_l0(self):
        with pytest.raises(nc.ContractError):
            update_rules(_base([0.5], l0=2), {0: []}, {0: [0.5]}, l0=0)

    def test_duplicate_insert_rejected(self):
        base = _base([0.5], l0=3)
        assert not base.add_selected(Rule(0, frozenset({0})), 0.1)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(0, 5), min_size=0, max_size=6),
           st.lists(st.floats(0, 5), min_size=0, max_size=12),
           st.integers(1, 6))
    def test_dominance_and_capacity(self, sel, cand, l0):
        sel = sel[:l0]
        base = _base(sel, l0)
        for j in range(len(cand)):
            base.add_candidate(Rule(0, frozenset({100 + j})))
        new, _ = update_rules(base, {0: cand}, {0: sel})
        after = sorted(new.losses[0])
        before = sorted(sel)
        assert len(after) <= l0
        assert len(after) >= len(before)
        assert all(a <= b for a, b in zip(after, before))

    def test_losses_must_be_finite(self):
        base = _base([0.5], l0=2)
        base.add_candidate(Rule(0, frozenset({3})))
        with pytest.raises(nc.ContractError):
            update_rules(base, {0: [math.nan]}, {0: [0.5]})
