"""Shared fixtures: the worked quartet example and small tree builders"""

import numpy as np
import pytest

from treedecomp.core.models import CorrelationMatrix
from treedecomp.core.tree import DecompTree, path_products
from treedecomp.utils.config import Stage1Config, Stage2Config

# ((0, 1), (2, 3)) with hidden nodes 4 (over 0, 1) and 5 (over 2, 3)
QUARTET_EDGES = {(4, 0): 0.8, (4, 1): 0.7, (4, 5): 0.5, (5, 2): 0.6, (5, 3): 0.9}
QUARTET_P = (0.4, 0.5, 0.6, 0.3)


@pytest.fixture
def quartet_tree():
    """Simplified quartet: hidden 4 holds 0, 1 and hidden 5"""
    return DecompTree(root=4, children={4: (0, 1, 5), 5: (2, 3)})


@pytest.fixture
def rooted_quartet_tree():
    """The same topology as Stage 1 builds it, with a degree-2 root"""
    return DecompTree(root=6, children={4: (0, 1), 5: (2, 3), 6: (4, 5)})


@pytest.fixture
def quartet_edges():
    return dict(QUARTET_EDGES)


@pytest.fixture
def quartet_matrix(quartet_tree):
    rho = path_products(quartet_tree, QUARTET_EDGES, 4)
    return CorrelationMatrix(rho=rho, p=np.array(QUARTET_P))


@pytest.fixture
def star_matrix():
    """Star with edge correlations 0.8, 0.9, 0.6"""
    rho = np.array([
        [1.0, 0.72, 0.48],
        [0.72, 1.0, 0.54],
        [0.48, 0.54, 1.0],
    ])
    return CorrelationMatrix(rho=rho, p=np.array([0.5, 0.5, 0.5]))


@pytest.fixture
def caterpillar_tree():
    """Six-leaf caterpillar, which the combination operations cannot build"""
    return DecompTree(root=6, children={6: (0, 1, 7), 7: (2, 8), 8: (3, 9), 9: (4, 5)})


@pytest.fixture
def balanced_tree():
    """((0, 1), (2, 3), (4, 5)) rooted at the hidden node joining the cherries"""
    return DecompTree(root=9, children={6: (0, 1), 7: (2, 3), 8: (4, 5), 9: (6, 7, 8)})


@pytest.fixture
def balanced_matrix(balanced_tree):
    edges = {edge: 0.55 + 0.05 * k for k, edge in enumerate(balanced_tree.edges)}
    rho = path_products(balanced_tree, edges, 6)
    return CorrelationMatrix(rho=rho, p=np.full(6, 0.5))


@pytest.fixture
def stage1_config():
    return Stage1Config()


@pytest.fixture
def stage2_config():
    return Stage2Config()


def make_matrix(rho, p=None) -> CorrelationMatrix:
    rho = np.asarray(rho, dtype=float)
    p = np.full(rho.shape[0], 0.5) if p is None else np.asarray(p, dtype=float)
    return CorrelationMatrix(rho=rho, p=p)
