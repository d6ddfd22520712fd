"""
treedecomp - Data Models

This module defines the core data models shared across the decomposition
stages: binary sample tables, validated correlation matrices, quartet error
reports, Stage 1 candidates and the Stage 1 trace.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .exceptions import (
    AsymmetricMatrix,
    DegenerateVariable,
    ConfigError,
    MatrixFormatError,
    OutOfRange,
    SchemaError,
    ShapeError,
    TooSmall,
)

SYMMETRY_TOLERANCE = 1e-12
UNIT_TOLERANCE = 1e-12


class ErrorMode(Enum):
    """How tree errors aggregate their quartet terms"""
    MAX = "max"
    MEAN = "mean"


class TiePolicy(Enum):
    """How select_candidate breaks ties between equal errors"""
    PRECEDENCE = "precedence"
    FINEST_QUAD = "finest_quad"
    LEXICOGRAPHIC = "lexicographic"


class SimplificationPolicy(Enum):
    """Tree simplification variants"""
    FLATTEN_ALL = "flatten-all"
    SUPPRESS_DEGREE_2 = "suppress-degree-2"


class CandidateKind(Enum):
    """The four combination operations"""
    PAIR_PAIR = "pair_pair"
    PAIR_TREE = "pair_tree"
    TREE_TREE = "tree_tree"
    NODE_TREE = "node_tree"

    @property
    def precedence(self) -> int:
        """Rank under the precedence tie policy, lower wins"""
        return _PRECEDENCE[self]


_PRECEDENCE = {
    CandidateKind.TREE_TREE: 0,
    CandidateKind.PAIR_TREE: 1,
    CandidateKind.PAIR_PAIR: 2,
    CandidateKind.NODE_TREE: 3,
}


def parse_enum(enum_type, value):
    """Coerce a string or enum member into enum_type"""
    if isinstance(value, enum_type):
        return value
    try:
        return enum_type(str(value).lower())
    except ValueError:
        choices = ", ".join(member.value for member in enum_type)
        raise ConfigError(f"invalid {enum_type.__name__} '{value}' (choose from {choices})") from None


def _readonly(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class SampleTable:
    """
    Binary observations, one row per sample

    Attributes:
        rows: (row_count, n) array of 0/1 values
    """
    rows: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.rows)
        if rows.ndim != 2:
            raise ShapeError("sample table must be two dimensional")
        if rows.size and not np.isin(rows, (0, 1)).all():
            raise MatrixFormatError("sample values must be 0 or 1")
        object.__setattr__(self, "rows", _readonly(rows.astype(np.int8)))

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[int]]) -> "SampleTable":
        """Build a table from nested sequences, rejecting ragged input"""
        rows = [list(row) for row in rows]
        if rows:
            width = len(rows[0])
            for index, row in enumerate(rows):
                if len(row) != width:
                    raise ShapeError(f"row {index} has {len(row)} values, expected {width}")
        return cls(rows=np.array(rows, dtype=np.int8).reshape(len(rows), -1))

    @property
    def n(self) -> int:
        return int(self.rows.shape[1])

    @property
    def row_count(self) -> int:
        return int(self.rows.shape[0])


@dataclass(frozen=True, eq=False)
class CorrelationMatrix:
    """
    Pairwise correlations of n binary variables with their marginals

    Construction validates and normalizes: near-symmetric input is averaged
    into exact symmetry, entries within unit_tolerance of +-1 are clamped and
    the diagonal is set to exactly 1.

    Attributes:
        rho: n x n correlation matrix
        p: marginal probabilities P(x_i = 1)
        unit_tolerance: how far past +-1 an entry may lie and still be clamped
    """
    rho: np.ndarray
    p: np.ndarray
    unit_tolerance: float = field(default=UNIT_TOLERANCE, repr=False)

    def __post_init__(self):
        rho = np.array(self.rho, dtype=float)
        p = np.array(self.p, dtype=float).reshape(-1)

        if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
            raise ShapeError(f"correlation matrix must be square, got shape {rho.shape}")
        n = rho.shape[0]
        if n < 2:
            raise TooSmall(n, minimum=2)
        if p.shape[0] != n:
            raise ShapeError(f"expected {n} marginals, got {p.shape[0]}")
        if not np.isfinite(rho).all() or not np.isfinite(p).all():
            raise MatrixFormatError("correlations and marginals must be finite")

        gap = float(np.max(np.abs(rho - rho.T)))
        if gap > SYMMETRY_TOLERANCE:
            raise AsymmetricMatrix(gap)
        rho = (rho + rho.T) / 2.0

        worst = np.unravel_index(np.argmax(np.abs(rho)), rho.shape)
        if abs(rho[worst]) > 1.0 + self.unit_tolerance:
            raise OutOfRange(float(rho[worst]), (int(worst[0]), int(worst[1])))
        if np.max(np.abs(np.diag(rho) - 1.0)) > 1e-9:
            raise MatrixFormatError("diagonal correlations must be 1")

        near_unit = np.abs(np.abs(rho) - 1.0) <= self.unit_tolerance
        rho[near_unit] = np.sign(rho[near_unit])
        np.fill_diagonal(rho, 1.0)

        for index, value in enumerate(p):
            if not 0.0 < value < 1.0:
                raise DegenerateVariable(index, f"marginal p[{index}] = {value} must lie strictly inside (0, 1)")

        object.__setattr__(self, "rho", _readonly(rho))
        object.__setattr__(self, "p", _readonly(p))

    @property
    def n(self) -> int:
        return int(self.rho.shape[0])

    def unit_pairs(self) -> List[Tuple[int, int]]:
        """Off-diagonal pairs with |rho| exactly 1"""
        upper = np.triu(np.abs(self.rho) == 1.0, k=1)
        return [(int(i), int(j)) for i, j in zip(*np.nonzero(upper))]

    def permuted(self, order: Sequence[int]) -> "CorrelationMatrix":
        """Relabel variables so that new index k is old index order[k]"""
        order = np.asarray(order)
        return CorrelationMatrix(rho=self.rho[np.ix_(order, order)], p=self.p[order], unit_tolerance=self.unit_tolerance)

    def to_dict(self) -> Dict[str, Any]:
        return {"n": self.n, "rho": self.rho.tolist(), "p": self.p.tolist()}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "CorrelationMatrix":
        try:
            return cls(rho=np.array(data["rho"], dtype=float), p=np.array(data["p"], dtype=float))
        except KeyError as e:
            raise SchemaError(f"correlation matrix document lacks {e}") from None


@dataclass(frozen=True)
class ErrorReport:
    """
    Outcome of one decomposition error evaluation

    Attributes:
        value: the error (max or mean of the evaluated quartet terms)
        witness: quadruple (i, j, k, l) of the largest term, read as the
            pairing (i, j) | (k, l)
        floor: smallest evaluated term
        terms: number of evaluated terms
    """
    value: float
    witness: Tuple[int, int, int, int]
    floor: float = 0.0
    terms: int = 1

    def to_dict(self) -> Dict[str, Any]:
        return {
            "value": self.value,
            "witness": list(self.witness),
            "floor": self.floor,
            "terms": self.terms,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ErrorReport":
        return cls(
            value=float(data["value"]),
            witness=tuple(int(x) for x in data["witness"]),
            floor=float(data.get("floor", data["value"])),
            terms=int(data.get("terms", 1)),
        )


@dataclass(frozen=True)
class Candidate:
    """
    One legal combination of the current forest

    Attributes:
        kind: which of the four operations applies
        nodes: independent variables taking part, pairs listed in order
            (i, j, k, l) for pair_pair, (i, j) for pair_tree, (i,) for
            node_tree
        trees: ids of participating trees
        error: the decomposition error of the combination
        split_error: largest join error of the clades the merge creates;
            filled when the split check scores the candidate
    """
    kind: CandidateKind
    nodes: Tuple[int, ...]
    trees: Tuple[int, ...]
    error: ErrorReport
    split_error: Optional[float] = None

    @property
    def score(self) -> float:
        """Decomposition error folded with the join error, when known"""
        return max(self.error.value, self.split_error or 0.0)

    def sort_key(self) -> Tuple[Any, ...]:
        """Deterministic lexicographic order of participants"""
        return (tuple(sorted(self.nodes)), tuple(sorted(self.trees)), self.kind.precedence, self.nodes)

    def to_dict(self) -> Dict[str, Any]:
        data = {
            "kind": self.kind.value,
            "nodes": list(self.nodes),
            "trees": list(self.trees),
            "error": self.error.to_dict(),
        }
        if self.split_error is not None:
            data["split_error"] = self.split_error
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Candidate":
        split_error = data.get("split_error")
        return cls(
            kind=CandidateKind(data["kind"]),
            nodes=tuple(int(x) for x in data.get("nodes", [])),
            trees=tuple(int(x) for x in data.get("trees", [])),
            error=ErrorReport.from_dict(data["error"]),
            split_error=None if split_error is None else float(split_error),
        )


@dataclass(frozen=True)
class TraceStep:
    """
    A Stage 1 step: the chosen candidate and the forest it produced

    Attributes:
        candidate: the combination that was applied
        independent: independent variables after the step
        trees: (tree id, sorted leaves) for every tree after the step
    """
    candidate: Candidate
    independent: Tuple[int, ...]
    trees: Tuple[Tuple[int, Tuple[int, ...]], ...]

    def to_dict(self) -> Dict[str, Any]:
        candidate = self.candidate.to_dict()
        return {
            "kind": candidate.pop("kind"),
            "participants": {"nodes": candidate.pop("nodes"), "trees": candidate.pop("trees")},
            **candidate,
            "independent": list(self.independent),
            "trees": [{"id": tree_id, "leaves": list(leaves)} for tree_id, leaves in self.trees],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TraceStep":
        participants = data.get("participants", {})
        candidate = Candidate.from_dict({
            **data,
            "nodes": participants.get("nodes", []),
            "trees": participants.get("trees", []),
        })
        return cls(
            candidate=candidate,
            independent=tuple(int(x) for x in data.get("independent", [])),
            trees=tuple((int(t["id"]), tuple(int(x) for x in t["leaves"])) for t in data.get("trees", [])),
        )


@dataclass
class Stage1Trace:
    """
    Ordered record of a Stage 1 run

    Attributes:
        n: number of observed variables
        steps: applied combinations in order
        evaluations: every quartet term inspected, join errors included
        split_evaluations: the part of evaluations spent on join errors
        config: the Stage 1 settings used
    """
    n: int
    steps: List[TraceStep] = field(default_factory=list)
    evaluations: int = 0
    split_evaluations: int = 0
    config: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "n": self.n,
            "steps": [step.to_dict() for step in self.steps],
            "evaluations": self.evaluations,
            "split_evaluations": self.split_evaluations,
            "config": self.config,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Stage1Trace":
        try:
            return cls(
                n=int(data["n"]),
                steps=[TraceStep.from_dict(step) for step in data.get("steps", [])],
                evaluations=int(data.get("evaluations", 0)),
                split_evaluations=int(data.get("split_evaluations", 0)),
                config=dict(data.get("config", {})),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise SchemaError(f"malformed trace document: {e}") from None
