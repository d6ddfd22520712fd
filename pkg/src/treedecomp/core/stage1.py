"""
treedecomp - Stage 1 Greedy Search

Builds the tree topology bottom-up: every step scores all legal
combinations of the current forest and applies the one with the smallest
score, until a single tree covers every variable.
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from itertools import combinations
from typing import Callable, Dict, FrozenSet, List, Optional, Tuple, Union

import numpy as np

from ..utils.config import Stage1Config, worker_cap
from .errors import QuartetScorer, quartet_errors
from .exceptions import (
    EmptyCandidateList,
    NoCandidates,
    NotStarRealizable,
    ShapeError,
    StuckState,
    TooSmall,
)
from .models import (
    Candidate,
    CandidateKind,
    CorrelationMatrix,
    ErrorReport,
    Stage1Trace,
    TiePolicy,
    TraceStep,
)
from .tree import (
    DecompTree,
    Edge,
    ForestState,
    combine_node_tree,
    combine_pair_pair,
    combine_pair_tree,
    combine_tree_tree,
)

logger = logging.getLogger(__name__)

MatrixOrScorer = Union[CorrelationMatrix, QuartetScorer]

# the three ways to split a sorted quartet (a, b, c, d) into two pairs
_PAIRINGS = ((0, 1, 2, 3), (0, 2, 1, 3), (0, 3, 1, 2))


@dataclass(frozen=True)
class StarDecomposition:
    """
    The single-hidden-node tree over three variables

    Attributes:
        tree: star with hidden root 3 and leaves 0, 1, 2
        edge_rho: (3, leaf) -> correlation between the hidden node and the leaf
    """
    tree: DecompTree
    edge_rho: Dict[Edge, float]


def star_decompose_3(matrix: CorrelationMatrix) -> StarDecomposition:
    """
    Star decomposition of three variables

    Solves rho_ij = rho_iw rho_jw for the three edge correlations. Signs use
    the assignment with the fewest negative edges.

    Raises:
        ShapeError: the matrix is not 3 x 3
        NotStarRealizable: a zero correlation, a non-positive triple product
            or an edge magnitude above 1
    """
    if matrix.n != 3:
        raise ShapeError(f"star decomposition needs exactly 3 variables, got {matrix.n}")
    r = matrix.rho
    r01, r02, r12 = float(r[0, 1]), float(r[0, 2]), float(r[1, 2])
    if r01 * r02 * r12 <= 0:
        raise NotStarRealizable(f"triple product {r01 * r02 * r12:.6g} must be positive")

    magnitudes = [
        np.sqrt(abs(r01 * r02 / r12)),
        np.sqrt(abs(r01 * r12 / r02)),
        np.sqrt(abs(r02 * r12 / r01)),
    ]
    for leaf, value in enumerate(magnitudes):
        if value > 1.0 + 1e-12:
            raise NotStarRealizable(f"edge correlation of variable {leaf} would be {value:.6g}")

    signs = [1.0, np.sign(r01), np.sign(r02)]
    if signs.count(-1.0) >= 2:
        signs = [-s for s in signs]

    tree = DecompTree(root=3, children={3: (0, 1, 2)})
    edge_rho = {(3, leaf): float(signs[leaf] * min(magnitudes[leaf], 1.0)) for leaf in range(3)}
    return StarDecomposition(tree=tree, edge_rho=edge_rho)


# ---------------------------------------------------------------------------
# Candidates
# ---------------------------------------------------------------------------

def _scorer(matrix: MatrixOrScorer, config: Stage1Config) -> QuartetScorer:
    if isinstance(matrix, QuartetScorer):
        return matrix
    return QuartetScorer(matrix, max_n=config.cache_max_n)


def enumerate_candidates(
    state: ForestState,
    matrix: MatrixOrScorer,
    config: Optional[Stage1Config] = None,
) -> List[Candidate]:
    """
    Score every legal combination of the forest

    Order is deterministic: pair_pair (quartets in lexicographic order, three
    pairings each), pair_tree, tree_tree, node_tree.

    Args:
        state: current forest
        matrix: correlations, or a scorer that already wraps them
        config: Stage 1 settings

    Returns:
        List of scored candidates

    Raises:
        NoCandidates: fewer than two units, or no combination applies
    """
    config = config or Stage1Config()
    scorer = _scorer(matrix, config)
    if state.unit_count < 2:
        raise NoCandidates(f"forest has {state.unit_count} unit(s); nothing to combine")

    independent = sorted(state.independent)
    tree_ids = sorted(state.trees)
    candidates = _pair_pair_candidates(independent, scorer)

    jobs: List[Tuple[CandidateKind, Tuple[int, ...], Tuple[int, ...], Callable[[], ErrorReport]]] = []
    for i, j in combinations(independent, 2):
        for t in tree_ids:
            tree = state.trees[t]
            if tree.size >= 2:
                jobs.append((CandidateKind.PAIR_TREE, (i, j), (t,),
                             lambda i=i, j=j, tree=tree: scorer.pair_tree(i, j, tree, config.error_mode)))
    for t1, t2 in combinations(tree_ids, 2):
        first, second = state.trees[t1], state.trees[t2]
        jobs.append((CandidateKind.TREE_TREE, (), (t1, t2),
                     lambda first=first, second=second: scorer.tree_tree(first, second, config.error_mode)))
    for i in independent:
        for t in tree_ids:
            tree = state.trees[t]
            if tree.size >= 3:
                jobs.append((CandidateKind.NODE_TREE, (i,), (t,),
                             lambda i=i, tree=tree: scorer.node_tree(i, tree)))

    workers = worker_cap(config.workers)
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            reports = list(executor.map(lambda job: job[3](), jobs))
    else:
        reports = [job[3]() for job in jobs]

    candidates.extend(
        Candidate(kind=kind, nodes=nodes, trees=trees, error=report)
        for (kind, nodes, trees, _), report in zip(jobs, reports)
    )
    if not candidates:
        raise NoCandidates(
            f"no combination applies to {len(independent)} independent variables and {len(tree_ids)} trees"
        )
    return candidates


def _pair_pair_candidates(independent: List[int], scorer: QuartetScorer) -> List[Candidate]:
    if len(independent) < 4:
        return []
    quartets = np.array(list(combinations(independent, 4)), dtype=int)
    errors = quartet_errors(scorer.rho, quartets)
    scorer.count_terms(errors.size)

    candidates = []
    for row, quartet in enumerate(quartets.tolist()):
        for column, order in enumerate(_PAIRINGS):
            nodes = tuple(quartet[position] for position in order)
            value = float(errors[row, column])
            report = ErrorReport(value=value, witness=nodes, floor=value, terms=1)
            candidates.append(Candidate(kind=CandidateKind.PAIR_PAIR, nodes=nodes, trees=(), error=report))
    return candidates


JoinPart = Tuple[FrozenSet[int], FrozenSet[int]]


def candidate_joins(state: ForestState, candidate: Candidate) -> List[JoinPart]:
    """
    Leaf-set pairs whose unions the candidate would turn into clades

    pair_pair creates {i, j}, {k, l} and their union; pair_tree creates
    {i, j} and its union with the tree; the other two kinds create one
    union each.
    """
    nodes = candidate.nodes
    trees = [state.tree(t).leaf_set for t in candidate.trees]
    kind = candidate.kind
    if kind is CandidateKind.PAIR_PAIR:
        i, j, k, l = nodes
        return [
            (frozenset((i,)), frozenset((j,))),
            (frozenset((k,)), frozenset((l,))),
            (frozenset((i, j)), frozenset((k, l))),
        ]
    if kind is CandidateKind.PAIR_TREE:
        i, j = nodes
        return [(frozenset((i,)), frozenset((j,))), (frozenset((i, j)), trees[0])]
    if kind is CandidateKind.TREE_TREE:
        return [(trees[0], trees[1])]
    return [(frozenset(nodes), trees[0])]


def score_candidates(
    candidates: List[Candidate],
    config: Optional[Stage1Config] = None,
    state: Optional[ForestState] = None,
    scorer: Optional[QuartetScorer] = None,
) -> List[Candidate]:
    """
    Attach join errors to every candidate that can reach the minimum score

    A candidate's score is the larger of its decomposition error and the
    join errors of the clades it creates. Join errors of two single
    variables are shared by many candidates and give a cheap lower bound;
    candidates are completed in order of that bound and the scan stops once
    the bound exceeds the best complete score by more than epsilon_tie.
    The returned list therefore holds every candidate of the tie class.

    Without split_check, or without a state and scorer, candidates are
    returned unchanged and score by their decomposition error alone.
    """
    config = config or Stage1Config()
    if not config.split_check or state is None or scorer is None:
        return list(candidates)

    bounded = []
    for position, candidate in enumerate(candidates):
        parts = candidate_joins(state, candidate)
        cheap = [scorer.join(a, b) for a, b in parts if len(a) == 1 and len(b) == 1]
        bounded.append((max([candidate.error.value, *cheap]), position, parts))
    bounded.sort(key=lambda item: (item[0], item[1]))

    best = float("inf")
    scored: List[Candidate] = []
    for bound, position, parts in bounded:
        if bound > best + config.epsilon_tie:
            break
        complete = _complete(candidates[position], parts, scorer)
        scored.append(complete)
        best = min(best, complete.score)
    return scored


def _complete(candidate: Candidate, parts: List[JoinPart], scorer: QuartetScorer) -> Candidate:
    return replace(candidate, split_error=max(scorer.join(a, b) for a, b in parts))


def select_candidate(
    candidates: List[Candidate],
    config: Optional[Stage1Config] = None,
    state: Optional[ForestState] = None,
    scorer: Optional[QuartetScorer] = None,
) -> Candidate:
    """
    Pick the candidate with the smallest score

    With split_check on (and a state and scorer given) the score folds in
    the join errors of score_candidates, so a merge whose new clades are
    not splits of the whole variable set loses to one whose clades are,
    however small its own decomposition error. Candidates within
    epsilon_tie of the minimum score are tied; the tie policy decides and
    lexicographic order of participants settles whatever is left.

    Raises:
        EmptyCandidateList: nothing to choose from
    """
    if not candidates:
        raise EmptyCandidateList("no candidates to select from")
    config = config or Stage1Config()
    eps = config.epsilon_tie

    scored = score_candidates(candidates, config, state, scorer)
    minimum = min(c.score for c in scored)
    tied = [c for c in scored if c.score <= minimum + eps]

    if len(tied) > 1:
        if config.tie_policy is TiePolicy.PRECEDENCE:
            rank = min(c.kind.precedence for c in tied)
            tied = [c for c in tied if c.kind.precedence == rank]
        elif config.tie_policy is TiePolicy.FINEST_QUAD:
            floor = min(c.error.floor for c in tied)
            tied = [c for c in tied if c.error.floor <= floor + eps]

    return min(tied, key=lambda c: c.sort_key())


def apply_candidate(state: ForestState, candidate: Candidate) -> ForestState:
    """Apply the combination a candidate describes"""
    kind, nodes, trees = candidate.kind, candidate.nodes, candidate.trees
    if kind is CandidateKind.PAIR_PAIR:
        return combine_pair_pair(state, *nodes)
    if kind is CandidateKind.PAIR_TREE:
        return combine_pair_tree(state, nodes[0], nodes[1], trees[0])
    if kind is CandidateKind.TREE_TREE:
        return combine_tree_tree(state, trees[0], trees[1])
    return combine_node_tree(state, nodes[0], trees[0])


# ---------------------------------------------------------------------------
# Search loop
# ---------------------------------------------------------------------------

class TreeDecomposer:
    """
    Runs the greedy search and keeps its counters

    Attributes:
        config: Stage 1 settings
        steps: combinations applied in the last run
        evaluations: every quad term scored, join errors included
        split_evaluations: the part of evaluations spent on join errors
        elapsed: wall time of the last run in seconds
    """

    def __init__(self, config: Optional[Stage1Config] = None):
        self.config = config or Stage1Config()
        self.steps = 0
        self.evaluations = 0
        self.split_evaluations = 0
        self.elapsed = 0.0

    def decompose(self, matrix: CorrelationMatrix) -> Tuple[DecompTree, Stage1Trace]:
        """
        Build a tree over all variables of the matrix

        Raises:
            TooSmall: fewer than three variables
            StuckState: the forest cannot be completed
        """
        n = matrix.n
        if n < 3:
            raise TooSmall(n)

        started = time.perf_counter()
        trace = Stage1Trace(n=n, config=self.config.to_dict())

        if n == 3:
            tree = self._star(matrix)
            self.steps = self.evaluations = self.split_evaluations = 0
            self.elapsed = time.perf_counter() - started
            return tree, trace

        scorer = QuartetScorer(matrix, max_n=self.config.cache_max_n)
        state = ForestState.initial(n)
        limit = 2 * n
        while not state.is_complete:
            if len(trace.steps) >= limit:
                raise StuckState(f"no complete tree after {limit} steps")
            try:
                candidates = enumerate_candidates(state, scorer, self.config)
            except NoCandidates as e:
                raise StuckState(f"forest cannot be advanced: {e}") from None

            chosen = select_candidate(candidates, self.config, state, scorer)
            state = apply_candidate(state, chosen)
            independent, trees = state.summary()
            trace.steps.append(TraceStep(candidate=chosen, independent=independent, trees=trees))
            logger.debug(
                f"Step {len(trace.steps)}: {chosen.kind.value} nodes={chosen.nodes} trees={chosen.trees} "
                f"score={chosen.score:.3g} ({len(candidates)} candidates)"
            )

        self.steps = len(trace.steps)
        self.evaluations = trace.evaluations = scorer.evaluations
        self.split_evaluations = trace.split_evaluations = scorer.split_evaluations
        self.elapsed = time.perf_counter() - started
        logger.info(
            f"Stage 1 finished: n={n}, {self.steps} steps, {self.evaluations} quad evaluations "
            f"in {self.elapsed:.3f}s"
        )
        return state.final_tree(), trace

    @staticmethod
    def _star(matrix: CorrelationMatrix) -> DecompTree:
        try:
            return star_decompose_3(matrix).tree
        except NotStarRealizable as e:
            logger.warning(f"Three-variable input is not star realizable ({e}); returning the star topology")
            return DecompTree(root=3, children={3: (0, 1, 2)})


def decompose(matrix: CorrelationMatrix, config: Optional[Stage1Config] = None) -> Tuple[DecompTree, Stage1Trace]:
    """Run Stage 1 and return the rooted tree with its trace"""
    return TreeDecomposer(config).decompose(matrix)


@dataclass(frozen=True)
class ReplayViolation:
    """A traced step whose choice was not the minimum on re-enumeration"""
    step: int
    chosen: float
    minimum: float


@dataclass
class ReplayReport:
    """Outcome of replay_trace"""
    steps: int = 0
    violations: List[ReplayViolation] = field(default_factory=list)
    consistent: bool = True

    @property
    def ok(self) -> bool:
        return self.consistent and not self.violations


def replay_trace(
    matrix: CorrelationMatrix,
    trace: Stage1Trace,
    config: Optional[Stage1Config] = None,
) -> ReplayReport:
    """
    Re-run a trace and check greedy local optimality at every step

    Each traced candidate is re-scored against a fresh enumeration of the
    state it was chosen in; its score (decomposition error folded with
    join errors when split_check is on) must not exceed the minimum by more
    than epsilon_tie. The forest after each step must match the trace.
    """
    config = config or Stage1Config()
    scorer = QuartetScorer(matrix, max_n=config.cache_max_n)
    state = ForestState.initial(matrix.n)
    report = ReplayReport()

    for number, step in enumerate(trace.steps, start=1):
        candidates = enumerate_candidates(state, scorer, config)
        minimum = min(c.score for c in score_candidates(candidates, config, state, scorer))
        chosen = _find(candidates, step.candidate)
        if chosen is None:
            report.consistent = False
            break
        if config.split_check:
            chosen = _complete(chosen, candidate_joins(state, chosen), scorer)
        if chosen.score > minimum + config.epsilon_tie:
            report.violations.append(ReplayViolation(step=number, chosen=chosen.score, minimum=minimum))

        state = apply_candidate(state, chosen)
        if state.summary() != (step.independent, step.trees):
            report.consistent = False
            break
        report.steps = number
    return report


def _find(candidates: List[Candidate], target: Candidate) -> Optional[Candidate]:
    for candidate in candidates:
        if (candidate.kind, candidate.nodes, candidate.trees) == (target.kind, target.nodes, target.trees):
            return candidate
    return None
