"""
treedecomp - Trees and Forest State

Rooted decomposition trees, the Stage 1 forest and the four combination
operations that grow it, plus tree simplification, split extraction and
topology comparison.

Node ids: a leaf's id is its variable index (0-based); hidden nodes are
numbered n, n+1, ... in creation order. A tree is identified by its root id.
"""

import logging
from collections import deque
from dataclasses import dataclass
from functools import cached_property
from itertools import combinations
from typing import Any, Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import networkx as nx
import numpy as np

from .errors import quartet_errors
from .exceptions import (
    InvalidTree,
    NotIndependent,
    OverlappingTrees,
    SameTree,
    SchemaError,
    UnknownTree,
)
from .models import CorrelationMatrix, SimplificationPolicy, parse_enum

logger = logging.getLogger(__name__)

Edge = Tuple[int, int]
Split = FrozenSet[int]


@dataclass(frozen=True)
class DecompTree:
    """
    A rooted tree whose leaves are observed variables

    Attributes:
        root: id of the root node (also the tree id)
        children: internal node id -> ordered child ids; nodes without an
            entry are leaves
    """
    root: int
    children: Mapping[int, Tuple[int, ...]]

    def __post_init__(self):
        children = {int(node): tuple(int(c) for c in kids) for node, kids in self.children.items()}
        object.__setattr__(self, "root", int(self.root))
        object.__setattr__(self, "children", children)

        if self.root not in children:
            raise InvalidTree(f"root {self.root} must be an internal node")

        seen = set()
        stack = [self.root]
        while stack:
            node = stack.pop()
            if node in seen:
                raise InvalidTree(f"node {node} is reached twice")
            seen.add(node)
            kids = children.get(node)
            if kids is not None:
                if not kids:
                    raise InvalidTree(f"internal node {node} has no children")
                stack.extend(kids)

        unreachable = set(children) - seen
        if unreachable:
            raise InvalidTree(f"nodes {sorted(unreachable)} are not connected to root {self.root}")

        leaves = seen - set(children)
        if len(children) > len(leaves) - 1:
            raise InvalidTree(f"{len(children)} internal nodes for {len(leaves)} leaves")

    # -- structure ---------------------------------------------------------

    @property
    def tree_id(self) -> int:
        return self.root

    @cached_property
    def leaf_set(self) -> FrozenSet[int]:
        return self.clades[self.root]

    @property
    def size(self) -> int:
        return len(self.leaf_set)

    @cached_property
    def internal_nodes(self) -> Tuple[int, ...]:
        return tuple(sorted(self.children))

    @cached_property
    def nodes(self) -> Tuple[int, ...]:
        return tuple(sorted(self.leaf_set | set(self.children)))

    @cached_property
    def preorder(self) -> Tuple[int, ...]:
        """Nodes in depth-first order, children visited in stored order"""
        order = []
        stack = [self.root]
        while stack:
            node = stack.pop()
            order.append(node)
            stack.extend(reversed(self.children.get(node, ())))
        return tuple(order)

    @cached_property
    def edges(self) -> Tuple[Edge, ...]:
        """(parent, child) pairs in preorder"""
        return tuple((node, child) for node in self.preorder for child in self.children.get(node, ()))

    @cached_property
    def parent(self) -> Dict[int, int]:
        return {child: node for node, child in self.edges}

    @cached_property
    def depth(self) -> Dict[int, int]:
        depth = {self.root: 0}
        for node, child in self.edges:
            depth[child] = depth[node] + 1
        return depth

    @cached_property
    def clades(self) -> Dict[int, FrozenSet[int]]:
        """Leaves below every node"""
        clades: Dict[int, FrozenSet[int]] = {}
        for node in reversed(self.preorder):
            kids = self.children.get(node)
            if kids is None:
                clades[node] = frozenset((node,))
            else:
                clades[node] = frozenset().union(*(clades[c] for c in kids))
        return clades

    @cached_property
    def leaf_lca_depth(self) -> Tuple[np.ndarray, np.ndarray]:
        """Sorted leaves and the depth of the LCA of every leaf pair"""
        leaves = np.array(sorted(self.leaf_set), dtype=int)
        position = {leaf: k for k, leaf in enumerate(leaves)}
        depths = np.zeros((leaves.size, leaves.size), dtype=int)
        for node, kids in self.children.items():
            groups = [[position[leaf] for leaf in self.clades[kid]] for kid in kids]
            for first, second in combinations(groups, 2):
                depths[np.ix_(first, second)] = self.depth[node]
                depths[np.ix_(second, first)] = self.depth[node]
        return leaves, depths

    def is_leaf(self, node: int) -> bool:
        return node not in self.children

    def clade(self, node: int) -> FrozenSet[int]:
        try:
            return self.clades[node]
        except KeyError:
            raise InvalidTree(f"node {node} is not in tree {self.root}") from None

    def lca(self, a: int, b: int) -> int:
        """Lowest common ancestor of two nodes"""
        depth, parent = self.depth, self.parent
        while depth[a] > depth[b]:
            a = parent[a]
        while depth[b] > depth[a]:
            b = parent[b]
        while a != b:
            a, b = parent[a], parent[b]
        return a

    def path_edges(self, a: int, b: int) -> List[Edge]:
        """Edges on the path between two nodes, as (parent, child) pairs"""
        top = self.lca(a, b)
        path = []
        for node in (a, b):
            while node != top:
                path.append((self.parent[node], node))
                node = self.parent[node]
        return path

    def to_graph(self) -> nx.Graph:
        """Undirected networkx view with a 'kind' attribute per node"""
        graph = nx.Graph()
        for node in self.preorder:
            graph.add_node(node, kind="leaf" if self.is_leaf(node) else "internal")
        graph.add_edges_from(self.edges)
        return graph

    def splits(self) -> FrozenSet[Split]:
        """
        Non-trivial leaf bipartitions induced by the edges

        Each split is reported as the side that does not hold the smallest
        leaf; only splits with at least two leaves on both sides are kept.
        """
        leaves = self.leaf_set
        anchor = min(leaves)
        found = set()
        for node, clade in self.clades.items():
            if node == self.root:
                continue
            side = clade if anchor not in clade else leaves - clade
            if 2 <= len(side) <= len(leaves) - 2:
                found.add(frozenset(side))
        return frozenset(found)

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> Dict[str, Any]:
        nodes = []
        for node in self.preorder:
            if self.is_leaf(node):
                nodes.append({"id": node, "kind": "leaf", "var": node})
            else:
                nodes.append({"id": node, "kind": "internal"})
        return {
            "nodes": nodes,
            "edges": [[p, c] for p, c in self.edges],
            "root": self.root,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "DecompTree":
        try:
            records = {int(rec["id"]): rec for rec in data["nodes"]}
            root = int(data["root"])
            children: Dict[int, List[int]] = {}
            for parent, child in data["edges"]:
                children.setdefault(int(parent), []).append(int(child))
        except (KeyError, TypeError, ValueError) as e:
            raise SchemaError(f"malformed tree document: {e}") from None

        for node_id, record in records.items():
            kind = record.get("kind")
            if kind == "leaf":
                if node_id in children:
                    raise SchemaError(f"leaf {node_id} has children")
                if int(record.get("var", node_id)) != node_id:
                    raise SchemaError(f"leaf {node_id} must carry var = {node_id}")
            elif kind == "internal":
                if node_id not in children:
                    raise SchemaError(f"internal node {node_id} has no children")
            else:
                raise SchemaError(f"node {node_id} has unknown kind {kind!r}")

        tree = cls(root=root, children={k: tuple(v) for k, v in children.items()})
        if set(tree.nodes) != set(records):
            raise SchemaError("node records do not match the edge list")
        return tree

    def to_dot(self, name: str = "tree") -> str:
        """Graphviz source: leaves as boxes, hidden nodes as circles"""
        lines = [f"digraph {name} {{"]
        for node in self.preorder:
            if self.is_leaf(node):
                lines.append(f'    {node} [shape=box, label="x{node}"];')
            else:
                lines.append(f'    {node} [shape=circle, label="w{node}"];')
        for parent, child in self.edges:
            lines.append(f"    {parent} -> {child};")
        lines.append("}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class ForestState:
    """
    Partition of the variables into independent leaves and trees

    Attributes:
        n: number of observed variables
        independent: variables not yet in any tree
        trees: tree id -> tree
        next_hidden_id: id the next hidden node will receive
    """
    n: int
    independent: FrozenSet[int]
    trees: Mapping[int, DecompTree]
    next_hidden_id: int

    def __post_init__(self):
        object.__setattr__(self, "independent", frozenset(int(i) for i in self.independent))
        object.__setattr__(self, "trees", dict(self.trees))

        covered = set(self.independent)
        for tree_id, tree in self.trees.items():
            if tree_id != tree.root:
                raise InvalidTree(f"tree keyed {tree_id} has root {tree.root}")
            if covered & tree.leaf_set:
                raise OverlappingTrees(f"tree {tree_id} shares variables {sorted(covered & tree.leaf_set)}")
            covered |= tree.leaf_set
        if covered != set(range(self.n)):
            raise InvalidTree(f"forest covers {sorted(covered)}, expected 0..{self.n - 1}")

    @classmethod
    def initial(cls, n: int) -> "ForestState":
        """Every variable independent, no trees"""
        return cls(n=n, independent=frozenset(range(n)), trees={}, next_hidden_id=n)

    @property
    def unit_count(self) -> int:
        return len(self.independent) + len(self.trees)

    @property
    def is_complete(self) -> bool:
        return not self.independent and len(self.trees) == 1

    def tree(self, tree_id: int) -> DecompTree:
        try:
            return self.trees[tree_id]
        except KeyError:
            raise UnknownTree(tree_id) from None

    def final_tree(self) -> DecompTree:
        if not self.is_complete:
            raise InvalidTree(f"forest still has {self.unit_count} units")
        return next(iter(self.trees.values()))

    def summary(self) -> Tuple[Tuple[int, ...], Tuple[Tuple[int, Tuple[int, ...]], ...]]:
        """Independent variables and (tree id, sorted leaves), for traces"""
        trees = tuple((tid, tuple(sorted(self.trees[tid].leaf_set))) for tid in sorted(self.trees))
        return tuple(sorted(self.independent)), trees

    def _require_independent(self, *indices: int):
        if len(set(indices)) != len(indices) or not all(i in self.independent for i in indices):
            raise NotIndependent(indices)


# ---------------------------------------------------------------------------
# Combination operations
# ---------------------------------------------------------------------------

def combine_pair_pair(state: ForestState, i: int, j: int, k: int, l: int) -> ForestState:
    """Join pairs (i, j) and (k, l) under a new root with two pair parents"""
    state._require_independent(i, j, k, l)
    w_a, w_b, w = state.next_hidden_id, state.next_hidden_id + 1, state.next_hidden_id + 2
    tree = DecompTree(root=w, children={w_a: (i, j), w_b: (k, l), w: (w_a, w_b)})
    return _replace(state, remove={i, j, k, l}, drop=(), add=tree, used=3)


def combine_pair_tree(state: ForestState, i: int, j: int, t: int) -> ForestState:
    """Join pair (i, j) and tree t; the old root becomes non-terminating"""
    state._require_independent(i, j)
    old = state.tree(t)
    w_p, w = state.next_hidden_id, state.next_hidden_id + 1
    children = dict(old.children)
    children[w_p] = (i, j)
    children[w] = (w_p, old.root)
    return _replace(state, remove={i, j}, drop=(t,), add=DecompTree(root=w, children=children), used=2)


def combine_tree_tree(state: ForestState, t1: int, t2: int) -> ForestState:
    """Join two trees under a new root"""
    if t1 == t2:
        raise SameTree(t1)
    first, second = state.tree(t1), state.tree(t2)
    w = state.next_hidden_id
    children = {**first.children, **second.children, w: (first.root, second.root)}
    return _replace(state, remove=set(), drop=(t1, t2), add=DecompTree(root=w, children=children), used=1)


def combine_node_tree(state: ForestState, i: int, t: int) -> ForestState:
    """Join variable i and tree t under a new root"""
    state._require_independent(i)
    old = state.tree(t)
    w = state.next_hidden_id
    children = {**old.children, w: (i, old.root)}
    return _replace(state, remove={i}, drop=(t,), add=DecompTree(root=w, children=children), used=1)


def _replace(state: ForestState, remove, drop, add: DecompTree, used: int) -> ForestState:
    trees = {tid: tree for tid, tree in state.trees.items() if tid not in drop}
    trees[add.root] = add
    return ForestState(
        n=state.n,
        independent=state.independent - set(remove),
        trees=trees,
        next_hidden_id=state.next_hidden_id + used,
    )


# ---------------------------------------------------------------------------
# Simplification and topology
# ---------------------------------------------------------------------------

def simplify(
    tree: DecompTree,
    policy: Union[SimplificationPolicy, str] = SimplificationPolicy.SUPPRESS_DEGREE_2,
    at: Optional[int] = None,
) -> DecompTree:
    """
    Remove redundant hidden nodes

    flatten-all hangs every leaf below `at` (default: the root) directly
    from `at`. suppress-degree-2 splices out internal nodes of undirected
    degree 2, drops dangling hidden nodes, and re-roots at the surviving
    internal node with the smallest id if the root was removed. Trees with
    fewer than three leaves are returned unchanged by suppress-degree-2.

    Args:
        tree: tree to simplify
        policy: flatten-all or suppress-degree-2
        at: sub-tree root for flatten-all

    Returns:
        The simplified tree, or `tree` itself when nothing changes
    """
    policy = parse_enum(SimplificationPolicy, policy)
    if policy is SimplificationPolicy.FLATTEN_ALL:
        return _flatten(tree, tree.root if at is None else at)
    return _suppress_degree_2(tree)


def _flatten(tree: DecompTree, at: int) -> DecompTree:
    if tree.is_leaf(at) or at not in tree.clades:
        raise InvalidTree(f"cannot flatten below {at}: not an internal node of tree {tree.root}")
    if all(tree.is_leaf(child) for child in tree.children[at]):
        return tree

    below = set()
    leaves = []
    stack = list(reversed(tree.children[at]))
    while stack:
        node = stack.pop()
        if tree.is_leaf(node):
            leaves.append(node)
        else:
            below.add(node)
            stack.extend(reversed(tree.children[node]))

    children = {node: kids for node, kids in tree.children.items() if node not in below}
    children[at] = tuple(leaves)
    return DecompTree(root=tree.root, children=children)


def _suppress_degree_2(tree: DecompTree) -> DecompTree:
    if tree.size < 3:
        return tree

    graph = tree.to_graph()
    internal = set(tree.children)
    changed = True
    touched = False
    while changed:
        changed = False
        for node in sorted(v for v in graph if v in internal):
            degree = graph.degree(node)
            if degree == 2:
                a, b = graph.neighbors(node)
                graph.remove_node(node)
                graph.add_edge(a, b)
            elif degree <= 1:
                graph.remove_node(node)
            else:
                continue
            changed = touched = True

    if not touched:
        return tree

    survivors = sorted(v for v in graph if v in internal)
    root = tree.root if tree.root in graph else survivors[0]
    logger.debug(f"suppress-degree-2 removed {len(internal) - len(survivors)} nodes; root {tree.root} -> {root}")
    return orient(graph, root)


def orient(graph: nx.Graph, root: int) -> DecompTree:
    """Root an undirected tree graph, visiting neighbors in sorted order"""
    children: Dict[int, List[int]] = {}
    seen = {root}
    queue = deque([root])
    while queue:
        node = queue.popleft()
        for neighbor in sorted(graph.neighbors(node)):
            if neighbor not in seen:
                seen.add(neighbor)
                children.setdefault(node, []).append(neighbor)
                queue.append(neighbor)
    return DecompTree(root=root, children={k: tuple(v) for k, v in children.items()})


def same_topology(a: DecompTree, b: DecompTree) -> bool:
    """Whether two trees have the same unrooted topology over the same leaves"""
    return a.leaf_set == b.leaf_set and a.splits() == b.splits()


def is_composable(tree: DecompTree) -> bool:
    """
    Whether the four combination operations can build this topology

    The operations never create a clade of exactly three leaves, so an
    unrooted binary tree is composable iff some edge can act as the root
    with no three-leaf clade on either side. The three-leaf star is the
    separately handled base case.
    """
    simple = simplify(tree, SimplificationPolicy.SUPPRESS_DEGREE_2)
    if simple.size == 3:
        return True
    if simple.size < 3:
        return False

    graph = simple.to_graph()
    leaves = simple.leaf_set
    if any(graph.degree(v) != 3 for v in simple.children if v in graph):
        return False
    return any(
        _side_size(graph, u, v, leaves) > 0 and _side_size(graph, v, u, leaves) > 0
        for u, v in graph.edges
    )


def _side_size(graph: nx.Graph, node: int, parent: int, leaves: FrozenSet[int]) -> int:
    """Leaf count on node's side of the edge, or -1 if a three-leaf clade occurs"""
    if node in leaves:
        return 1
    total = 0
    for neighbor in graph.neighbors(node):
        if neighbor == parent:
            continue
        size = _side_size(graph, neighbor, node, leaves)
        if size < 0:
            return -1
        total += size
    return -1 if total == 3 else total


# ---------------------------------------------------------------------------
# Quartets
# ---------------------------------------------------------------------------

def split_membership(splits: Iterable[Split], size: int) -> np.ndarray:
    """Boolean (split count, size) matrix; row s marks the leaves in split s"""
    splits = list(splits)
    membership = np.zeros((len(splits), size), dtype=bool)
    for row, split in enumerate(splits):
        membership[row, sorted(split)] = True
    return membership


def quartet_pairings(membership: np.ndarray, quartets: np.ndarray) -> np.ndarray:
    """
    Tree-induced pairing of every quartet

    Pairing 0 is ab|cd, 1 is ac|bd and 2 is ad|bc for a quartet (a, b, c, d).
    Quartets no split resolves get -1. Leading axes of `membership` are
    broadcast, so a stack of topologies is scored at once.

    Args:
        membership: (..., splits, leaves) boolean matrix from split_membership
        quartets: (Q, 4) leaf indices

    Returns:
        (..., Q) integer pairings
    """
    a, b, c, d = (membership[..., quartets[:, column]] for column in range(4))

    def separated(x, y, u, v):
        return ((x & y & ~u & ~v) | (~x & ~y & u & v)).any(axis=-2)

    result = np.full(a.shape[:-2] + (quartets.shape[0],), -1, dtype=int)
    result[separated(a, d, b, c)] = 2
    result[separated(a, c, b, d)] = 1
    result[separated(a, b, c, d)] = 0
    return result


def leaf_quartets(leaves: Iterable[int]) -> np.ndarray:
    """All sorted four-leaf subsets as a (Q, 4) array"""
    return np.array(list(combinations(sorted(leaves), 4)), dtype=int).reshape(-1, 4)


def quartet_topology_error(matrix: CorrelationMatrix, tree: DecompTree, reduce: str = "max") -> float:
    """
    Quad error of the tree-induced pairing, reduced over all leaf quartets

    Args:
        matrix: correlations over (at least) the tree's leaves
        tree: topology to score
        reduce: "max" or "sum"

    Returns:
        The reduced error; 0.0 when no quartet is resolved
    """
    if reduce not in ("max", "sum"):
        raise ValueError(f"reduce must be 'max' or 'sum', got {reduce!r}")
    quartets = leaf_quartets(tree.leaf_set)
    if not len(quartets):
        return 0.0
    pairing = quartet_pairings(split_membership(tree.splits(), matrix.n), quartets)
    resolved = pairing >= 0
    if not resolved.any():
        return 0.0
    errors = quartet_errors(matrix.rho, quartets[resolved])
    chosen = errors[np.arange(errors.shape[0]), pairing[resolved]]
    return float(chosen.max() if reduce == "max" else chosen.sum())


def path_products(tree: DecompTree, edge_rho: Mapping[Edge, float], size: Optional[int] = None) -> np.ndarray:
    """
    Leaf-pair correlations as products of edge correlations along paths

    Args:
        tree: topology
        edge_rho: (parent, child) -> edge correlation, for every tree edge
        size: output dimension, default max leaf + 1

    Returns:
        size x size matrix with unit diagonal; pairs outside the tree are 0
    """
    size = max(tree.leaf_set) + 1 if size is None else size
    result = np.zeros((size, size))
    np.fill_diagonal(result, 1.0)
    for leaf in tree.leaf_set:
        products = node_products(tree, edge_rho, leaf)
        for other in tree.leaf_set:
            if other != leaf:
                result[leaf, other] = products[other]
    return result


def node_products(tree: DecompTree, edge_rho: Mapping[Edge, float], source: int) -> Dict[int, float]:
    """Product of edge correlations from `source` to every node of the tree"""
    adjacency: Dict[int, List[Tuple[int, float]]] = {}
    for parent, child in tree.edges:
        value = float(edge_rho[(parent, child)])
        adjacency.setdefault(parent, []).append((child, value))
        adjacency.setdefault(child, []).append((parent, value))

    products = {source: 1.0}
    stack = [source]
    while stack:
        node = stack.pop()
        for neighbor, value in adjacency.get(node, ()):
            if neighbor not in products:
                products[neighbor] = products[node] * value
                stack.append(neighbor)
    return products
