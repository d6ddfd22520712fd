import logging

import pytest

from treedecomp.core.errors import QuartetScorer
from treedecomp.core.exceptions import EmptyCandidateList, NoCandidates, NotStarRealizable, ShapeError, TooSmall
from treedecomp.core.models import Candidate, CandidateKind, ErrorReport, Stage1Trace, TraceStep
from treedecomp.core.stage1 import (
    TreeDecomposer,
    candidate_joins,
    decompose,
    enumerate_candidates,
    replay_trace,
    score_candidates,
    select_candidate,
    star_decompose_3,
)
from treedecomp.core.synth import exact_matrix, generate_model, perturb
from treedecomp.core.tree import ForestState, combine_pair_pair, quartet_topology_error, same_topology
from treedecomp.utils.config import Stage1Config, SynthConfig

from ..conftest import make_matrix


def candidate(kind, nodes=(), trees=(), value=0.0, floor=None):
    report = ErrorReport(value=value, witness=(0, 1, 2, 3), floor=value if floor is None else floor)
    return Candidate(kind=CandidateKind(kind), nodes=tuple(nodes), trees=tuple(trees), error=report)


class TestStar:
    def test_edge_correlations(self, star_matrix):
        star = star_decompose_3(star_matrix)
        assert star.tree.children == {3: (0, 1, 2)}
        assert star.edge_rho[(3, 0)] == pytest.approx(0.8)
        assert star.edge_rho[(3, 1)] == pytest.approx(0.9)
        assert star.edge_rho[(3, 2)] == pytest.approx(0.6)

    def test_fewest_negative_edges(self):
        star = star_decompose_3(make_matrix([[1, -0.72, -0.48], [-0.72, 1, 0.54], [-0.48, 0.54, 1]]))
        assert star.edge_rho[(3, 0)] == pytest.approx(-0.8)
        assert star.edge_rho[(3, 1)] == pytest.approx(0.9)
        assert star.edge_rho[(3, 2)] == pytest.approx(0.6)

    def test_edge_above_one(self):
        with pytest.raises(NotStarRealizable):
            star_decompose_3(make_matrix([[1, 0.9, 0.9], [0.9, 1, 0.1], [0.9, 0.1, 1]]))

    def test_negative_triple_product(self):
        with pytest.raises(NotStarRealizable):
            star_decompose_3(make_matrix([[1, 0.5, 0.5], [0.5, 1, -0.5], [0.5, -0.5, 1]]))

    def test_wrong_size(self, quartet_matrix):
        with pytest.raises(ShapeError):
            star_decompose_3(quartet_matrix)


class TestCandidates:
    def test_initial_forest_offers_every_pairing(self, balanced_matrix):
        candidates = enumerate_candidates(ForestState.initial(6), balanced_matrix)
        assert len(candidates) == 45
        assert all(c.kind is CandidateKind.PAIR_PAIR for c in candidates)

    def test_all_kinds_after_first_merge(self, balanced_matrix):
        state = combine_pair_pair(ForestState.initial(6), 0, 1, 2, 3)
        kinds = {c.kind for c in enumerate_candidates(state, balanced_matrix)}
        assert kinds == {CandidateKind.PAIR_TREE, CandidateKind.NODE_TREE}

    def test_complete_forest(self, quartet_matrix):
        state = combine_pair_pair(ForestState.initial(4), 0, 1, 2, 3)
        with pytest.raises(NoCandidates):
            enumerate_candidates(state, quartet_matrix)

    def test_three_independent_variables(self, star_matrix):
        with pytest.raises(NoCandidates):
            enumerate_candidates(ForestState.initial(3), star_matrix)

    def test_joins(self):
        state = combine_pair_pair(ForestState.initial(6), 0, 1, 2, 3)
        pair_tree = candidate("pair_tree", (4, 5), (8,))
        assert candidate_joins(state, pair_tree) == [
            (frozenset({4}), frozenset({5})),
            (frozenset({4, 5}), frozenset(range(4))),
        ]
        pair_pair = candidate("pair_pair", (0, 2, 1, 3))
        assert candidate_joins(ForestState.initial(6), pair_pair)[-1] == (frozenset({0, 2}), frozenset({1, 3}))


class TestSelection:
    def test_precedence_prefers_pair_tree(self):
        options = [candidate("pair_pair", (0, 1, 2, 3)), candidate("pair_tree", (4, 5), (8,))]
        assert select_candidate(options).kind is CandidateKind.PAIR_TREE

    def test_lexicographic_prefers_smaller_participants(self):
        options = [candidate("pair_tree", (4, 5), (8,)), candidate("pair_pair", (0, 2, 1, 3)), candidate("pair_pair", (0, 1, 2, 3))]
        chosen = select_candidate(options, Stage1Config(tie_policy="lexicographic"))
        assert chosen.nodes == (0, 1, 2, 3)

    def test_finest_quad(self):
        options = [candidate("pair_tree", (4, 5), (8,), 0.1, 0.05), candidate("pair_tree", (6, 7), (8,), 0.1, 0.01)]
        chosen = select_candidate(options, Stage1Config(tie_policy="finest_quad"))
        assert chosen.nodes == (6, 7)

    def test_smallest_error_wins_outside_tolerance(self):
        options = [candidate("tree_tree", (), (8, 9), 0.2), candidate("node_tree", (4,), (8,), 0.1)]
        assert select_candidate(options).kind is CandidateKind.NODE_TREE

    def test_errors_within_tolerance_are_tied(self):
        options = [candidate("node_tree", (4,), (8,), 0.0), candidate("tree_tree", (), (8, 9), 1e-13)]
        assert select_candidate(options).kind is CandidateKind.TREE_TREE

    def test_empty_list(self):
        with pytest.raises(EmptyCandidateList):
            select_candidate([])

    def test_join_error_outweighs_a_small_decomposition_error(self, balanced_matrix):
        state = ForestState.initial(6)
        scorer = QuartetScorer(perturb(balanced_matrix, 1e-6, seed=3))
        options = enumerate_candidates(state, scorer)
        chosen = select_candidate(options, Stage1Config(), state, scorer)
        pairs = {frozenset(chosen.nodes[:2]), frozenset(chosen.nodes[2:])}
        assert pairs <= {frozenset({0, 1}), frozenset({2, 3}), frozenset({4, 5})}
        assert chosen.split_error is not None and chosen.score < 1e-4

    def test_split_check_off_scores_by_error_alone(self, balanced_matrix):
        state = ForestState.initial(6)
        scorer = QuartetScorer(balanced_matrix)
        options = enumerate_candidates(state, scorer)
        assert score_candidates(options, Stage1Config(split_check=False), state, scorer) == options
        assert scorer.split_evaluations == 0

    def test_scan_stops_early(self, balanced_matrix):
        state = ForestState.initial(6)
        scorer = QuartetScorer(balanced_matrix)
        options = enumerate_candidates(state, scorer)
        scored = score_candidates(options, Stage1Config(), state, scorer)
        assert 0 < len(scored) < len(options)
        assert all(c.split_error is not None for c in scored)


class TestDecompose:
    def test_quartet_in_one_step(self, quartet_matrix, quartet_tree):
        tree, trace = decompose(quartet_matrix)
        assert len(trace.steps) == 1
        assert trace.steps[0].candidate.nodes == (0, 1, 2, 3)
        assert same_topology(tree, quartet_tree)

    def test_balanced_tree(self, balanced_matrix, balanced_tree):
        decomposer = TreeDecomposer()
        tree, trace = decomposer.decompose(balanced_matrix)
        assert same_topology(tree, balanced_tree)
        assert decomposer.steps == len(trace.steps) == 2
        assert decomposer.evaluations == trace.evaluations > 0

    @pytest.mark.parametrize("n", [4, 5, 6, 7, 8, 9, 10])
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_composable_models_are_recovered(self, n, seed):
        model = generate_model(n, seed, SynthConfig(family="composable"))
        matrix = exact_matrix(model)
        tree, _ = decompose(matrix)
        assert tree.leaf_set == frozenset(range(n))
        assert same_topology(tree, model.topology)
        assert quartet_topology_error(matrix, tree) < 1e-9

    @pytest.mark.parametrize("n", [6, 7, 8, 9])
    @pytest.mark.parametrize("seed", range(5))
    def test_slightly_noisy_models_are_recovered(self, n, seed):
        model = generate_model(n, seed, SynthConfig(family="composable"))
        tree, trace = decompose(perturb(exact_matrix(model), 1e-6, seed=[seed, 2]))
        assert same_topology(tree, model.topology)
        assert len(trace.steps) <= n - 1

    def test_two_variables(self):
        with pytest.raises(TooSmall):
            decompose(make_matrix([[1, 0.5], [0.5, 1]]))

    def test_three_variables_give_the_star(self, star_matrix):
        tree, trace = decompose(star_matrix)
        assert tree.children == {3: (0, 1, 2)}
        assert trace.steps == []

    def test_unrealizable_triple_still_gives_the_star(self, caplog):
        matrix = make_matrix([[1, 0.9, 0.9], [0.9, 1, 0.1], [0.9, 0.1, 1]])
        with caplog.at_level(logging.WARNING):
            tree, _ = decompose(matrix)
        assert tree.children == {3: (0, 1, 2)}
        assert "not star realizable" in caplog.text

    def test_threads_do_not_change_the_result(self, balanced_matrix):
        serial, _ = decompose(balanced_matrix)
        threaded, _ = decompose(balanced_matrix, Stage1Config(workers=2))
        assert threaded.children == serial.children

    def test_mean_mode_recovers_exact_input(self, balanced_matrix, balanced_tree):
        tree, _ = decompose(balanced_matrix, Stage1Config(error_mode="mean"))
        assert same_topology(tree, balanced_tree)


class TestReplay:
    def test_own_trace_replays(self, balanced_matrix):
        _, trace = decompose(balanced_matrix)
        report = replay_trace(balanced_matrix, trace)
        assert report.ok
        assert report.steps == len(trace.steps)

    def test_suboptimal_step_is_flagged(self, balanced_matrix):
        _, trace = decompose(balanced_matrix)
        first = trace.steps[0]
        worse = candidate("pair_pair", (0, 2, 1, 3), value=0.0)
        trace.steps[0] = TraceStep(candidate=worse, independent=first.independent, trees=first.trees)
        report = replay_trace(balanced_matrix, trace)
        assert not report.ok
        assert report.violations[0].step == 1
        assert report.violations[0].chosen > report.violations[0].minimum

    def test_trace_survives_serialization(self, balanced_matrix):
        _, trace = decompose(balanced_matrix, Stage1Config(tie_policy="lexicographic"))
        data = trace.to_dict()
        restored = Stage1Trace.from_dict(data)
        assert restored.to_dict() == data
        assert replay_trace(balanced_matrix, restored, Stage1Config(tie_policy="lexicographic")).ok
