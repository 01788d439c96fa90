import numpy as np
import pytest

from conftest import oracle_inputs, random_instance
from enum_oracle import enumerate_marginals
from treekt.engine import (
    Difficulty,
    InteractionRecord,
    PosteriorState,
    StudentHistory,
    TracerParams,
)
from treekt.errors import DataValidationError
from treekt.policy import education_value, mastery_rank, random_policy, select_best_kc
from treekt.tree import KcTree


class TestEducationValue:
    def test_worked_example(self, star_tree, star_params):
        ev = education_value(star_params, star_tree, StudentHistory("s"), "L1")
        assert ev.value == pytest.approx(2.335484, abs=1e-5)
        assert ev.baseline == pytest.approx(1.9, abs=1e-9)

    def test_certain_mastery_is_uninformative(self):
        tree = KcTree.from_parent_links([("R", "root", None)])
        params = TracerParams(
            gamma={"R": 1 - 1e-12}, epsilon=0.2, r_easy=0.9, r_med=0.8, r_hard=0.5
        )
        ev = education_value(params, tree, StudentHistory("s"), "R")
        assert ev.value == pytest.approx(1.0, abs=1e-9)
        assert ev.baseline == pytest.approx(1.0, abs=1e-9)

    def test_symmetric_candidates_equal(self, star_tree, star_params):
        ev1 = education_value(star_params, star_tree, StudentHistory("s"), "L1")
        ev2 = education_value(star_params, star_tree, StudentHistory("s"), "L2")
        assert ev1.value == pytest.approx(ev2.value, abs=1e-12)

    def test_nonleaf_candidate_rejected(self, star_tree, star_params):
        with pytest.raises(DataValidationError, match="not a leaf"):
            education_value(star_params, star_tree, StudentHistory("s"), "R")

    def test_matches_enumeration(self, star_tree, star_params):
        history = StudentHistory("s", (InteractionRecord("L2", False),))
        ev = education_value(star_params, star_tree, history, "L1")
        augmented = StudentHistory(
            "s", history.records + (InteractionRecord("L1", True, Difficulty.MEDIUM),)
        )
        marginals, _ = enumerate_marginals(
            *oracle_inputs(star_tree, star_params, augmented),
            epsilon=star_params.epsilon,
        )
        assert ev.value == pytest.approx(sum(marginals), abs=1e-9)

    def test_history_permutation_invariance(self, star_tree, star_params):
        records = (
            InteractionRecord("L1", True),
            InteractionRecord("L2", False),
            InteractionRecord("L1", False, Difficulty.HARD),
        )
        fwd = StudentHistory("s", records)
        rev = StudentHistory("s", records[::-1])
        a = education_value(star_params, star_tree, fwd, "L2")
        b = education_value(star_params, star_tree, rev, "L2")
        assert a.value == pytest.approx(b.value, abs=1e-12)

    def test_nonnegative_information_gain(self):
        # empirical property, not a claimed theorem: a hypothetical correct
        # answer never lowers total posterior mastery when r_med > epsilon
        rng = np.random.default_rng(11)
        for _ in range(1000):
            tree, params, history = random_instance(rng, max_nodes=7, max_records=6)
            candidate = tree.leaves[int(rng.integers(len(tree.leaves)))]
            ev = education_value(params, tree, history, candidate)
            assert ev.value >= ev.baseline - 1e-9


class TestSelectBestKc:
    def test_singleton(self):
        tree = KcTree.from_parent_links([("R", "root", None)])
        params = TracerParams(
            gamma={"R": 0.5}, epsilon=0.2, r_easy=0.9, r_med=0.8, r_hard=0.5
        )
        out = select_best_kc(params, tree, StudentHistory("s"))
        assert out.selected == "R"
        assert out.mastery_rank == 1

    def test_prefers_unobserved_concept(self, star_tree, star_params):
        history = StudentHistory("s", (InteractionRecord("L1", True),))
        out = select_best_kc(star_params, star_tree, history)
        assert out.selected == "L2"

    def test_tie_breaks_to_document_order(self, star_tree, star_params):
        out = select_best_kc(star_params, star_tree, StudentHistory("s"))
        assert out.selected == "L1"

    def test_argmax_consistency(self):
        rng = np.random.default_rng(23)
        for _ in range(40):
            tree, params, history = random_instance(rng, max_nodes=9, max_records=8)
            out = select_best_kc(params, tree, history)
            values = {ev.kc: ev.value for ev in out.per_candidate}
            assert values[out.selected] == max(values.values())

    def test_per_candidate_matches_education_value(self, star_tree, star_params):
        history = StudentHistory("s", (InteractionRecord("L2", True),))
        out = select_best_kc(star_params, star_tree, history)
        for ev in out.per_candidate:
            direct = education_value(star_params, star_tree, history, ev.kc)
            assert ev.value == pytest.approx(direct.value, abs=1e-12)
            assert ev.baseline == pytest.approx(direct.baseline, abs=1e-12)

    def test_rank_in_bounds(self):
        rng = np.random.default_rng(31)
        for _ in range(20):
            tree, params, history = random_instance(rng)
            out = select_best_kc(params, tree, history)
            assert 1 <= out.mastery_rank <= len(tree.leaves)


class TestRandomPolicy:
    def test_single_leaf(self):
        tree = KcTree.from_parent_links([("R", "root", None)])
        assert random_policy(tree, 0) == "R"

    def test_uniform_frequencies(self):
        tree = KcTree.from_parent_links(
            [("R", "r", None)] + [(f"L{i}", f"l{i}", "R") for i in range(4)]
        )
        rng = np.random.default_rng(1234)
        draws = [random_policy(tree, rng) for _ in range(100_000)]
        for leaf in tree.leaves:
            freq = draws.count(leaf) / len(draws)
            assert abs(freq - 0.25) < 0.01

    def test_seed_determinism(self, star_tree):
        a = [random_policy(star_tree, np.random.default_rng(7)) for _ in range(5)]
        rng1, rng2 = np.random.default_rng(7), np.random.default_rng(7)
        seq1 = [random_policy(star_tree, rng1) for _ in range(20)]
        seq2 = [random_policy(star_tree, rng2) for _ in range(20)]
        assert seq1 == seq2


class TestMasteryRank:
    def test_highest_is_rank_one(self):
        state = PosteriorState({"a": 0.9, "b": 0.5, "c": 0.1})
        assert mastery_rank(state, ["a", "b", "c"], "a") == 1

    def test_lowest_is_last(self):
        mastery = {f"k{i}": 1.0 - i / 100 for i in range(66)}
        state = PosteriorState(mastery)
        leaves = list(mastery)
        assert mastery_rank(state, leaves, "k65") == 66

    def test_tie_breaks_to_document_order(self):
        state = PosteriorState({"a": 0.9, "b": 0.9, "c": 0.1})
        assert mastery_rank(state, ["a", "b", "c"], "a") == 1
        assert mastery_rank(state, ["a", "b", "c"], "b") == 2

    def test_unknown_selected(self):
        state = PosteriorState({"a": 0.9})
        with pytest.raises(DataValidationError):
            mastery_rank(state, ["a"], "zz")
