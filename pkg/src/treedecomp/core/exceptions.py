"""
treedecomp - Exceptions

All errors raised by the library derive from TreeDecompError. The CLI maps
InputError and TreeError to exit status 2 and NumericError to exit status 3.
"""

from typing import Any, Optional, Tuple


class TreeDecompError(Exception):
    """Base class for every treedecomp error"""


# ---------------------------------------------------------------------------
# Input and format errors
# ---------------------------------------------------------------------------

class InputError(TreeDecompError, ValueError):
    """Input data or parameters are malformed"""


class ShapeError(InputError):
    """Rows of a sample table or matrix have inconsistent lengths"""


class DegenerateVariable(InputError):
    """A variable has a marginal of exactly 0 or 1"""

    def __init__(self, index: int, message: Optional[str] = None):
        self.index = index
        super().__init__(message or f"variable {index} is constant; its correlation is undefined")


class AsymmetricMatrix(InputError):
    """Correlation matrix is not symmetric within tolerance"""

    def __init__(self, max_gap: float):
        self.max_gap = max_gap
        super().__init__(f"correlation matrix is not symmetric (max |rho[i][j] - rho[j][i]| = {max_gap:.3g})")


class OutOfRange(InputError):
    """A correlation lies outside [-1, 1]"""

    def __init__(self, value: float, where: Optional[Tuple[int, int]] = None):
        self.value = value
        self.where = where
        location = f" at {where}" if where else ""
        super().__init__(f"correlation {value:.6g}{location} is outside [-1, 1]")


class TooSmall(InputError):
    """Fewer variables than the method needs"""

    def __init__(self, n: int, minimum: int = 3):
        self.n = n
        self.minimum = minimum
        super().__init__(f"need at least {minimum} variables, got {n}")


class TooLarge(InputError):
    """More variables than an exhaustive routine accepts"""

    def __init__(self, n: int, maximum: int):
        self.n = n
        self.maximum = maximum
        super().__init__(f"exhaustive search is limited to {maximum} variables, got {n}")


class MatrixFormatError(InputError):
    """A matrix or sample file does not follow the declared CSV layout"""


class SchemaError(InputError):
    """A JSON document does not follow the expected schema"""


class ConfigError(InputError):
    """A configuration value or option lies outside its domain"""


# ---------------------------------------------------------------------------
# Tree and forest errors
# ---------------------------------------------------------------------------

class TreeError(TreeDecompError, ValueError):
    """A tree operation received invalid operands"""


class InvalidTree(TreeError):
    """Node and edge records do not describe a rooted tree"""


class NotIndependent(TreeError):
    """A variable is already part of a tree or is repeated"""

    def __init__(self, indices: Any):
        self.indices = indices
        super().__init__(f"variables {indices} are not distinct independent nodes")


class UnknownTree(TreeError):
    """No tree with the given id exists in the forest"""

    def __init__(self, tree_id: int):
        self.tree_id = tree_id
        super().__init__(f"no tree with id {tree_id}")


class SameTree(TreeError):
    """A tree cannot be combined with itself"""

    def __init__(self, tree_id: int):
        self.tree_id = tree_id
        super().__init__(f"cannot combine tree {tree_id} with itself")


class TreeTooSmall(TreeError):
    """A tree has fewer leaves than an error metric needs"""

    def __init__(self, size: int, minimum: int):
        self.size = size
        self.minimum = minimum
        super().__init__(f"tree has {size} leaves, need at least {minimum}")


class OverlappingTrees(TreeError):
    """Two trees share leaves"""


class TreeNotSimplified(TreeError):
    """An internal node of degree 2 makes edge parameters unidentifiable"""

    def __init__(self, node: int):
        self.node = node
        super().__init__(f"internal node {node} has degree 2; run suppress-degree-2 first")


class QuartetIndexError(TreeDecompError, IndexError):
    """Quartet indices are duplicated or out of range"""


# ---------------------------------------------------------------------------
# Search errors
# ---------------------------------------------------------------------------

class SearchError(TreeDecompError, RuntimeError):
    """The greedy search cannot proceed"""


class NoCandidates(SearchError):
    """No legal combination exists for the current forest"""


class StuckState(SearchError):
    """The forest is incomplete but cannot be advanced"""


class EmptyCandidateList(SearchError):
    """select_candidate was given nothing to choose from"""


class NotStarRealizable(SearchError):
    """Three correlations cannot come from a single hidden node"""


class SynthError(SearchError):
    """No generator model of the requested family could be drawn"""


# ---------------------------------------------------------------------------
# Numeric errors
# ---------------------------------------------------------------------------

class NumericError(TreeDecompError, ArithmeticError):
    """A numerical stage failed"""


class SingularSystem(NumericError):
    """The path incidence system is rank deficient or ill conditioned"""

    def __init__(self, message: str, condition: Optional[float] = None):
        self.condition = condition
        super().__init__(message)


class FitNotConverged(NumericError):
    """Constrained fit missed the tolerance within its start budget"""

    def __init__(self, node: int, objective: float, best: Any = None):
        self.node = node
        self.objective = objective
        self.best = best
        super().__init__(f"fit for hidden node {node} stopped at objective {objective:.3g}")


class CorrelationTooSmall(NumericError):
    """|rho_ij| is too small for the log transform"""

    def __init__(self, i: int, j: int, value: float):
        self.i = i
        self.j = j
        self.value = value
        super().__init__(f"|rho[{i}][{j}]| = {abs(value):.3g} is below rho_min")


class InconsistentSigns(UserWarning):
    """No edge sign assignment reproduces every observed correlation sign"""
