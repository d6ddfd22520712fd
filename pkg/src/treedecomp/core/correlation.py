"""
treedecomp - Correlation Ingestion

Builds validated CorrelationMatrix objects from binary sample tables or from
precomputed matrix files, and writes both formats back out.

Matrix CSV layout: first line n, then n lines of matrix rows, then one line
with the n marginals. Sample CSV layout: one observation per line, n columns
of 0/1, with an optional header line.
"""

import csv
import logging
from pathlib import Path
from typing import List, Optional, Union

import numpy as np

from .exceptions import (
    DegenerateVariable,
    MatrixFormatError,
    ShapeError,
    TooSmall,
)
from .models import UNIT_TOLERANCE, CorrelationMatrix, SampleTable

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def compute_correlations(
    samples: SampleTable,
    laplace: float = 0.0,
    unit_tolerance: float = UNIT_TOLERANCE,
) -> CorrelationMatrix:
    """
    Estimate pairwise correlations from binary observations

    Frequencies are maximum likelihood (divided by row_count). With
    laplace = k > 0, every cell of each 2x2 table receives k pseudo-counts.

    Args:
        samples: binary observation table
        laplace: pseudo-counts per 2x2 cell
        unit_tolerance: slack past +-1 that is clamped instead of rejected

    Returns:
        CorrelationMatrix with empirical marginals

    Raises:
        MatrixFormatError: fewer than two rows
        DegenerateVariable: a column is constant
    """
    if samples.row_count < 2:
        raise MatrixFormatError(f"need at least 2 observations, got {samples.row_count}")
    if laplace < 0:
        raise MatrixFormatError(f"laplace pseudo-count must be >= 0, got {laplace}")

    x = samples.rows.astype(float)
    ones = x.sum(axis=0)
    for index, count in enumerate(ones):
        if count == 0 or count == samples.row_count:
            raise DegenerateVariable(index)

    total = samples.row_count + 4.0 * laplace
    p = (ones + 2.0 * laplace) / total
    joint = (x.T @ x + laplace) / total

    variance = p * (1.0 - p)
    rho = (joint - np.outer(p, p)) / np.sqrt(np.outer(variance, variance))
    np.fill_diagonal(rho, 1.0)
    rho = (rho + rho.T) / 2.0

    matrix = CorrelationMatrix(rho=rho, p=p, unit_tolerance=unit_tolerance)
    _warn_unit_pairs(matrix)
    return matrix


def correlation_from_joint(p_ij, p_i, p_j):
    """rho of two binary variables from P(i=1, j=1) and the two marginals"""
    return (p_ij - p_i * p_j) / np.sqrt(p_i * (1.0 - p_i) * p_j * (1.0 - p_j))


def load_matrix(source: PathLike, unit_tolerance: float = UNIT_TOLERANCE) -> CorrelationMatrix:
    """
    Read a matrix CSV file

    Entries within unit_tolerance past +-1 are clamped to +-1.

    Raises:
        MatrixFormatError: layout or number parsing problems
        TooSmall: n < 3
        AsymmetricMatrix, OutOfRange, DegenerateVariable: validation failures
    """
    path = Path(source)
    try:
        with open(path, "r", encoding="utf-8", newline="") as f:
            lines = [row for row in csv.reader(f) if any(cell.strip() for cell in row)]
    except OSError as e:
        raise MatrixFormatError(f"cannot read {path}: {e}") from None

    if not lines:
        raise MatrixFormatError(f"{path} is empty")
    try:
        n = int(lines[0][0].strip())
    except ValueError:
        raise MatrixFormatError(f"first line of {path} must be the variable count") from None
    if n < 3:
        raise TooSmall(n)
    if len(lines) != n + 2:
        raise MatrixFormatError(f"{path}: expected {n + 2} non-empty lines, found {len(lines)}")

    rows = [_parse_floats(line, n, path, number) for number, line in enumerate(lines[1:n + 1], start=2)]
    marginals = _parse_floats(lines[n + 1], n, path, n + 2)

    matrix = CorrelationMatrix(rho=np.array(rows), p=np.array(marginals), unit_tolerance=unit_tolerance)
    logger.info(f"Loaded {n}x{n} correlation matrix from {path}")
    _warn_unit_pairs(matrix)
    return matrix


def save_matrix(matrix: CorrelationMatrix, target: Optional[PathLike] = None) -> str:
    """Render a matrix in the CSV layout read by load_matrix, writing it when a target is given"""
    lines = [str(matrix.n)]
    lines.extend(",".join(repr(float(v)) for v in row) for row in matrix.rho)
    lines.append(",".join(repr(float(v)) for v in matrix.p))
    text = "\n".join(lines) + "\n"
    if target is not None:
        Path(target).write_text(text, encoding="utf-8")
    return text


def load_samples(source: PathLike) -> SampleTable:
    """
    Read a sample CSV file

    A first line containing any non-numeric cell is taken as a header.
    """
    path = Path(source)
    try:
        with open(path, "r", encoding="utf-8", newline="") as f:
            lines = [row for row in csv.reader(f) if any(cell.strip() for cell in row)]
    except OSError as e:
        raise MatrixFormatError(f"cannot read {path}: {e}") from None

    if lines and _is_header(lines[0]):
        lines = lines[1:]
    if not lines:
        raise MatrixFormatError(f"{path} holds no observations")

    rows: List[List[int]] = []
    width = len(lines[0])
    for number, line in enumerate(lines, start=1):
        if len(line) != width:
            raise ShapeError(f"{path}: row {number} has {len(line)} values, expected {width}")
        try:
            values = [int(cell.strip()) for cell in line]
        except ValueError:
            raise MatrixFormatError(f"{path}: row {number} is not binary") from None
        rows.append(values)

    table = SampleTable.from_rows(rows)
    logger.info(f"Loaded {table.row_count} observations of {table.n} variables from {path}")
    return table


def save_samples(table: SampleTable, target: Optional[PathLike] = None, header: bool = True) -> str:
    """Render a sample table as CSV with an x0..x{n-1} header"""
    lines = []
    if header:
        lines.append(",".join(f"x{i}" for i in range(table.n)))
    lines.extend(",".join(str(int(v)) for v in row) for row in table.rows)
    text = "\n".join(lines) + "\n"
    if target is not None:
        Path(target).write_text(text, encoding="utf-8")
    return text


def _parse_floats(line: List[str], n: int, path: Path, number: int) -> List[float]:
    if len(line) != n:
        raise ShapeError(f"{path}: line {number} has {len(line)} values, expected {n}")
    try:
        return [float(cell.strip()) for cell in line]
    except ValueError:
        raise MatrixFormatError(f"{path}: line {number} holds a non-numeric value") from None


def _is_header(line: List[str]) -> bool:
    for cell in line:
        try:
            float(cell.strip())
        except ValueError:
            return True
    return False


def _warn_unit_pairs(matrix: CorrelationMatrix):
    pairs = matrix.unit_pairs()
    if pairs:
        logger.warning(f"{len(pairs)} variable pairs are perfectly correlated: {pairs[:5]}")


def detect_input_kind(source: PathLike) -> str:
    """
    Guess whether a CSV file holds a matrix or samples

    A matrix file starts with a line holding only the variable count.
    """
    path = Path(source)
    try:
        with open(path, "r", encoding="utf-8", newline="") as f:
            for row in csv.reader(f):
                cells = [cell.strip() for cell in row if cell.strip()]
                if cells:
                    return "matrix" if len(cells) == 1 and cells[0].isdigit() and len(row) == 1 else "samples"
    except OSError as e:
        raise MatrixFormatError(f"cannot read {path}: {e}") from None
    raise MatrixFormatError(f"{path} is empty")
