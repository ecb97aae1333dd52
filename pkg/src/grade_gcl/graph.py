"""Sparse undirected graph storage and self-looped mean propagation.

A :class:`Graph` keeps the adjacency in CSR form (sorted neighbor lists, no
stored self-loops), a dense feature matrix, and optional community labels.
Propagation follows the row-normalized self-looped transition: row i of the
output is the mean of node i's own row and its neighbors' rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, ParseError, UsageError, ValidationError


@dataclass(frozen=True)
class NeighborList:
    """One node's (possibly augmented) neighborhood.

    ``members`` is sorted ascending, duplicate-free, and never contains the
    owner itself.
    """

    owner: int
    members: np.ndarray

    def __post_init__(self):
        members = np.asarray(self.members, dtype=np.int64)
        object.__setattr__(self, "members", members)
        if members.size:
            if np.any(np.diff(members) <= 0):
                raise ValidationError(f"neighbor list of {self.owner} not sorted/unique")
            if np.any(members == self.owner):
                raise ValidationError(f"neighbor list of {self.owner} contains itself")

    def __len__(self):
        return int(self.members.size)


class Graph:
    """Immutable undirected graph: CSR adjacency + dense features + labels."""

    def __init__(self, indptr, indices, features, labels=None, validate=True):
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.features = np.asarray(features, dtype=np.float64)
        self.labels = None if labels is None else np.asarray(labels, dtype=np.int64)
        self.degrees = np.diff(self.indptr)
        self._transition = None
        if validate:
            self._validate()

    @property
    def num_nodes(self) -> int:
        return self.features.shape[0]

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    @property
    def num_classes(self) -> int:
        if self.labels is None:
            raise ValidationError("graph has no labels")
        return int(self.labels.max()) + 1

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i] : self.indptr[i + 1]]

    def neighbor_list(self, i: int) -> NeighborList:
        return NeighborList(i, self.neighbors(i).copy())

    def _validate(self):
        n = self.num_nodes
        if self.indptr.shape != (n + 1,) or self.indptr[0] != 0:
            raise ValidationError("indptr inconsistent with node count")
        if self.indices.size != self.indptr[-1]:
            raise ValidationError("indices length inconsistent with indptr")
        if self.indices.size and (self.indices.min() < 0 or self.indices.max() >= n):
            raise ValidationError("neighbor index out of range")
        if not np.all(np.isfinite(self.features)):
            raise ValidationError("features contain NaN/Inf")
        edge_set = set()
        for i in range(n):
            nbrs = self.neighbors(i)
            if nbrs.size:
                if np.any(np.diff(nbrs) <= 0):
                    raise ValidationError(f"neighbors of {i} not sorted/unique")
                if np.any(nbrs == i):
                    raise ValidationError(f"self-loop stored at node {i}")
            edge_set.update((i, int(j)) for j in nbrs)
        for i, j in edge_set:
            if (j, i) not in edge_set:
                raise ValidationError(f"adjacency not symmetric at edge ({i},{j})")
        if self.labels is not None:
            if self.labels.shape != (n,):
                raise ValidationError("label count != node count")
            if self.labels.size and self.labels.min() < 0:
                raise ValidationError("negative label")

    def transition(self) -> sp.csr_matrix:
        """Self-looped row-normalized transition matrix (cached)."""
        if self._transition is None:
            self._transition = _build_transition(
                self.num_nodes, [self.neighbors(i) for i in range(self.num_nodes)]
            )
        return self._transition


def _build_transition(n: int, neighbor_arrays) -> sp.csr_matrix:
    """Row-stochastic matrix: row i spreads weight 1/(d_i+1) over {i} ∪ nbrs(i)."""
    indptr = np.zeros(n + 1, dtype=np.int64)
    for i, nbrs in enumerate(neighbor_arrays):
        indptr[i + 1] = indptr[i] + len(nbrs) + 1
    indices = np.empty(indptr[-1], dtype=np.int64)
    data = np.empty(indptr[-1], dtype=np.float64)
    for i, nbrs in enumerate(neighbor_arrays):
        lo, hi = indptr[i], indptr[i + 1]
        indices[lo] = i
        indices[lo + 1 : hi] = nbrs
        data[lo:hi] = 1.0 / (len(nbrs) + 1)
    return sp.csr_matrix((data, indices, indptr), shape=(n, n))


def graph_from_edges(num_nodes, edges, features, labels=None):
    """Build a validated Graph from an iterable of (src, dst) pairs.

    Directed duplicates are merged, stored adjacency is symmetric, and
    self-loops are dropped. Returns (graph, dropped_self_loop_count).
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] != num_nodes:
        raise ValidationError(
            f"feature rows ({features.shape[0] if features.ndim == 2 else '?'}) != node count ({num_nodes})"
        )
    dropped = 0
    pairs = set()
    for src, dst in edges:
        if not (0 <= src < num_nodes and 0 <= dst < num_nodes):
            raise ValidationError(f"edge ({src},{dst}) out of range [0,{num_nodes})")
        if src == dst:
            dropped += 1
            continue
        pairs.add((src, dst))
        pairs.add((dst, src))
    adj = [[] for _ in range(num_nodes)]
    for src, dst in pairs:
        adj[src].append(dst)
    indptr = np.zeros(num_nodes + 1, dtype=np.int64)
    for i, nbrs in enumerate(adj):
        nbrs.sort()
        indptr[i + 1] = indptr[i] + len(nbrs)
    indices = np.concatenate([np.asarray(a, dtype=np.int64) for a in adj]) if pairs else np.empty(0, dtype=np.int64)
    graph = Graph(indptr, indices, features, labels)
    return graph, dropped


def load_graph(edge_path, feature_path, label_path=None):
    """Load a graph from the on-disk text formats.

    Edge file: one `src<TAB>dst` pair per line, `#` starts a comment line.
    Feature file: one comma-separated row of reals per node.
    Label file (optional): one integer per line.

    Returns (graph, dropped_self_loop_count).
    """
    features = _load_features(feature_path)
    num_nodes = features.shape[0]
    edges = _load_edges(edge_path)
    labels = None
    if label_path is not None:
        labels = _load_labels(label_path, num_nodes)
    return graph_from_edges(num_nodes, edges, features, labels)


def _load_edges(path):
    edges = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ParseError(path, line_no, f"expected 'src<TAB>dst', got {line!r}")
            try:
                edges.append((int(parts[0]), int(parts[1])))
            except ValueError:
                raise ParseError(path, line_no, f"non-integer endpoint in {line!r}") from None
    return edges


def _load_features(path):
    rows = []
    width = None
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = [float(tok) for tok in line.split(",")]
            except ValueError:
                raise ParseError(path, line_no, "non-numeric feature value") from None
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise ParseError(path, line_no, f"expected {width} values, got {len(row)}")
            rows.append(row)
    if not rows:
        raise ValidationError(f"{path}: empty feature file")
    features = np.asarray(rows, dtype=np.float64)
    if not np.all(np.isfinite(features)):
        raise ValidationError(f"{path}: features contain NaN/Inf")
    return features


def _load_labels(path, num_nodes):
    labels = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                labels.append(int(line))
            except ValueError:
                raise ParseError(path, line_no, f"non-integer label {line!r}") from None
    if len(labels) != num_nodes:
        raise ValidationError(f"{path}: {len(labels)} labels for {num_nodes} nodes")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min() < 0:
        raise ValidationError(f"{path}: negative label")
    return labels


def save_graph(graph: Graph, edge_path, feature_path, label_path=None):
    """Write a graph back in the loadable text formats.

    Edges are emitted once each, sorted by (min endpoint, max endpoint);
    feature values use shortest round-trip decimal repr so that
    load → save → load reproduces the graph bit-exactly.
    """
    edges = sorted(
        {(min(i, int(j)), max(i, int(j))) for i in range(graph.num_nodes) for j in graph.neighbors(i)}
    )
    with open(edge_path, "w", encoding="utf-8") as fh:
        for a, b in edges:
            fh.write(f"{a}\t{b}\n")
    with open(feature_path, "w", encoding="utf-8") as fh:
        for row in graph.features:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    if label_path is not None:
        if graph.labels is None:
            raise UsageError("graph has no labels to save")
        with open(label_path, "w", encoding="utf-8") as fh:
            for lab in graph.labels:
                fh.write(f"{int(lab)}\n")


def propagate(graph: Graph, features) -> np.ndarray:
    """One self-looped mean-aggregation step over the stored adjacency.

    Row i of the result is (features[i] + sum of neighbor rows) / (d_i + 1).
    """
    features = np.asarray(features, dtype=np.float64)
    if features.shape[0] != graph.num_nodes:
        raise ValidationError("feature row count != node count")
    return graph.transition() @ features


def degree_distribution(graph: Graph, exclude_below: int):
    """Empirical distribution of degrees strictly greater than the cutoff.

    Returns (values, probabilities); probabilities sum to 1. Raises
    ConfigError when no node exceeds the cutoff.
    """
    kept = graph.degrees[graph.degrees > exclude_below]
    if kept.size == 0:
        raise ConfigError(f"no node has degree > {exclude_below}")
    values, counts = np.unique(kept, return_counts=True)
    return values, counts / counts.sum()
