"""Graph substrate: storage, hop structure, homophily metrics and generators."""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DomainError, ParseError, PreconditionError, RangeError, ShapeError
from .rng import make_rng


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected simple graph in CSR form with node features and optional labels.

    ``indptr``/``indices`` hold sorted, duplicate-free neighbor lists; self-loops
    are never stored. Use :meth:`from_edges` rather than the raw constructor.
    """

    indptr: np.ndarray
    indices: np.ndarray
    features: np.ndarray
    labels: np.ndarray | None = None
    class_count: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.indptr) - 1
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise ShapeError(f"features must be {n} x d, got {self.features.shape}")
        if self.labels is not None and len(self.labels) != n:
            raise ShapeError(f"labels must have length {n}, got {len(self.labels)}")
        for arr in (self.indptr, self.indices, self.features):
            arr.setflags(write=False)
        if self.labels is not None:
            self.labels.setflags(write=False)

    @classmethod
    def from_edges(cls, num_nodes: int, edges, features, labels=None, class_count: int | None = None,
                   meta: dict | None = None) -> "Graph":
        """Build a graph from an iterable of ``(u, v)`` pairs.

        Edges are symmetrized and deduplicated; self-loops are dropped.
        """
        features = np.array(features, dtype=np.float64, copy=True)
        if features.ndim == 1:
            features = features.reshape(num_nodes, -1)
        edges = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges, dtype=np.int64)
        edges = edges.reshape(-1, 2)
        if edges.size and (edges.min() < 0 or edges.max() >= num_nodes):
            bad = edges[(edges < 0).any(axis=1) | (edges >= num_nodes).any(axis=1)][0]
            raise RangeError(f"edge {tuple(bad)} out of range for {num_nodes} nodes")
        edges = edges[edges[:, 0] != edges[:, 1]]
        both = np.concatenate([edges, edges[:, ::-1]]) if edges.size else edges
        if both.size:
            both = np.unique(both, axis=0)  # lexicographic -> sorted neighbor lists
        counts = np.bincount(both[:, 0], minlength=num_nodes) if both.size else np.zeros(num_nodes, np.int64)
        indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        indices = both[:, 1].astype(np.int64) if both.size else np.zeros(0, np.int64)
        if labels is not None:
            labels = np.array(labels, dtype=np.int64, copy=True)
            if class_count is None:
                class_count = int(labels.max()) + 1 if len(labels) else 0
        return cls(indptr, indices, features, labels, int(class_count or 0), dict(meta or {}))

    @property
    def num_nodes(self) -> int:
        return len(self.indptr) - 1

    @property
    def num_edges(self) -> int:
        return len(self.indices) // 2

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def neighbors(self, u: int) -> np.ndarray:
        self._check_node(u)
        return self.indices[self.indptr[u]:self.indptr[u + 1]]

    def degree(self, u: int) -> int:
        self._check_node(u)
        return int(self.indptr[u + 1] - self.indptr[u])

    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def edge_list(self) -> np.ndarray:
        """Undirected edges as an ``(M, 2)`` array with ``u < v``."""
        src = np.repeat(np.arange(self.num_nodes), self.degrees())
        mask = src < self.indices
        return np.stack([src[mask], self.indices[mask]], axis=1)

    def require_labels(self) -> np.ndarray:
        if self.labels is None:
            raise PreconditionError("graph has no labels")
        return self.labels

    def _check_node(self, u: int):
        if not 0 <= u < self.num_nodes:
            raise RangeError(f"node {u} out of range [0, {self.num_nodes})")


@dataclass(frozen=True)
class HopSet:
    center: int
    hop: int
    members: tuple[int, ...]

    def __len__(self):
        return len(self.members)


@dataclass(frozen=True)
class SbmConfig:
    nodes_per_class: int
    class_count: int
    p_intra: float
    p_inter: float
    feature_dim: int
    class_mean_separation: float = 2.0
    noise_std: float = 1.0
    seed: int = 0

    def validate(self):
        if self.nodes_per_class <= 0 or self.class_count <= 0:
            raise ConfigError("SBM needs at least one node")
        for name in ("p_intra", "p_inter"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"{name}={p} is not a probability")
        if self.class_mean_separation < 0 or self.noise_std < 0:
            raise ConfigError("separation and noise_std must be nonnegative")
        if self.feature_dim < self.class_count:
            raise ConfigError("feature_dim must be >= class_count (one mean direction per class)")


# --
# IO

def _read_lines(path):
    with open(path, encoding="utf-8") as fh:
        yield from enumerate(fh, start=1)


def load_graph(edges_path, features_path, labels_path=None) -> Graph:
    """Load a graph from an edge list, a feature CSV and an optional label file."""
    features = []
    with open(features_path, encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                features.append([float(c) for c in row])
            except ValueError:
                if lineno == 1 and not features:
                    continue  # header
                raise ParseError(f"non-numeric feature value in {row!r}", lineno) from None
    if not features:
        raise ParseError("features file is empty")
    width = len(features[0])
    for i, row in enumerate(features):
        if len(row) != width:
            raise ShapeError(f"feature row {i} has {len(row)} columns, expected {width}")
    num_nodes = len(features)

    edges = []
    max_id = -1
    for lineno, line in _read_lines(edges_path):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        parts = text.split()
        if len(parts) != 2:
            raise ParseError(f"expected two node ids, got {text!r}", lineno)
        try:
            u, v = int(parts[0], 10), int(parts[1], 10)
        except ValueError:
            raise ParseError(f"node ids must be base-10 integers, got {text!r}", lineno) from None
        if u < 0 or v < 0:
            raise RangeError(f"line {lineno}: negative node id")
        max_id = max(max_id, u, v)
        edges.append((u, v))
    if max_id >= num_nodes:
        raise ShapeError(f"edge list references node {max_id} but features have {num_nodes} rows")

    labels = None
    if labels_path is not None:
        labels = []
        for lineno, line in _read_lines(labels_path):
            text = line.strip().rstrip(",")
            if not text:
                continue
            try:
                labels.append(int(text))
            except ValueError:
                if lineno == 1 and not labels:
                    continue
                raise ParseError(f"label must be an integer, got {text!r}", lineno) from None
        if len(labels) != num_nodes:
            raise ShapeError(f"{len(labels)} labels for {num_nodes} nodes")
    return Graph.from_edges(num_nodes, edges, features, labels)


def save_graph(g: Graph, edges_path, features_path, labels_path=None):
    """Write ``g`` in the formats read by :func:`load_graph`."""
    with open(edges_path, "w", encoding="utf-8") as fh:
        for u, v in g.edge_list():
            fh.write(f"{u} {v}\n")
    with open(features_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for row in g.features:
            writer.writerow([repr(float(x)) for x in row])
    if labels_path is not None:
        labels = g.require_labels()
        Path(labels_path).write_text("".join(f"{int(y)}\n" for y in labels), encoding="utf-8")


# --
# Hop structure

def hop_distances(g: Graph, u: int, max_hop: int | None = None) -> np.ndarray:
    """BFS distances from ``u``; unreachable (or beyond ``max_hop``) nodes get -1."""
    g._check_node(u)
    dist = np.full(g.num_nodes, -1, dtype=np.int64)
    dist[u] = 0
    queue = deque([u])
    while queue:
        v = queue.popleft()
        if max_hop is not None and dist[v] >= max_hop:
            continue
        for w in g.indices[g.indptr[v]:g.indptr[v + 1]]:
            if dist[w] < 0:
                dist[w] = dist[v] + 1
                queue.append(w)
    return dist


def hop_sets(g: Graph, u: int, max_hop: int) -> list[HopSet]:
    """``[N_u^0, ..., N_u^max_hop]`` under shortest-path distance semantics."""
    dist = hop_distances(g, u, max_hop)
    return [HopSet(u, k, tuple(int(v) for v in np.flatnonzero(dist == k))) for k in range(max_hop + 1)]


def k_hop(g: Graph, u: int, k: int) -> HopSet:
    if k < 0:
        raise PreconditionError("hop index must be >= 0")
    return hop_sets(g, u, k)[k]


# --
# Homophily

def edge_homophily(g: Graph) -> float:
    labels = g.require_labels()
    edges = g.edge_list()
    if len(edges) == 0:
        raise DomainError("edge homophily is undefined without edges")
    return float(np.mean(labels[edges[:, 0]] == labels[edges[:, 1]]))


def node_homophily(g: Graph, u: int) -> float:
    labels = g.require_labels()
    nbrs = g.neighbors(u)
    if len(nbrs) == 0:
        raise DomainError(f"node {u} is isolated")
    return float(np.mean(labels[nbrs] == labels[u]))


def hop_consistency(g: Graph, u: int, i: int) -> float:
    """Fraction of the exactly-``i``-hop neighbors of ``u`` that share its label."""
    labels = g.require_labels()
    members = k_hop(g, u, i).members
    if not members:
        raise DomainError(f"hop {i} of node {u} is empty")
    return float(np.mean(labels[list(members)] == labels[u]))


# --
# Generators

def class_means(class_count: int, feature_dim: int, separation: float) -> np.ndarray:
    """Class means on a scaled simplex: every pair is exactly ``separation`` apart."""
    means = np.zeros((class_count, feature_dim))
    means[np.arange(class_count), np.arange(class_count)] = separation / math.sqrt(2.0)
    return means


def generate_sbm(cfg: SbmConfig) -> Graph:
    """Sample a stochastic block model with Gaussian class-conditional features.

    Node ``i`` belongs to class ``i // nodes_per_class``. Every unordered pair is
    an edge independently with probability ``p_intra`` or ``p_inter``.
    """
    cfg.validate()
    n = cfg.nodes_per_class * cfg.class_count
    labels = np.repeat(np.arange(cfg.class_count), cfg.nodes_per_class)
    rng = make_rng(cfg.seed, 0)
    iu, iv = np.triu_indices(n, k=1)
    prob = np.where(labels[iu] == labels[iv], cfg.p_intra, cfg.p_inter)
    keep = rng.random(len(iu)) < prob
    edges = np.stack([iu[keep], iv[keep]], axis=1)
    noise = make_rng(cfg.seed, 1).standard_normal((n, cfg.feature_dim))
    features = class_means(cfg.class_count, cfg.feature_dim, cfg.class_mean_separation)[labels]
    features = features + cfg.noise_std * noise
    return Graph.from_edges(n, edges, features, labels, cfg.class_count,
                            meta={"generator": "sbm", "seed": cfg.seed})


def generate_regular_tree(branching: int, depth: int, feature_dim: int = 1, seed: int | None = None) -> Graph:
    """Tree in which every non-leaf has degree ``branching``; node 0 is the root.

    Nodes are numbered breadth-first. Features are one-hot-free random normals when
    ``seed`` is given, otherwise zeros.
    """
    if branching < 2 or depth < 1:
        raise PreconditionError("need branching >= 2 and depth >= 1")
    edges = []
    frontier = [0]
    count = 1
    for level in range(depth):
        children_each = branching if level == 0 else branching - 1
        nxt = []
        for parent in frontier:
            for _ in range(children_each):
                edges.append((parent, count))
                nxt.append(count)
                count += 1
        frontier = nxt
    if seed is None:
        features = np.zeros((count, feature_dim))
    else:
        features = make_rng(seed).standard_normal((count, feature_dim))
    return Graph.from_edges(count, edges, features,
                            meta={"generator": "regular_tree", "branching": branching, "depth": depth})


def relabel(g: Graph, labels) -> Graph:
    """Same structure and features with a new label vector."""
    labels = np.asarray(labels, dtype=np.int64)
    return Graph(g.indptr.copy(), g.indices.copy(), g.features.copy(), labels.copy(),
                 int(labels.max()) + 1 if len(labels) else 0, dict(g.meta))


def with_features(g: Graph, features) -> Graph:
    features = np.asarray(features, dtype=np.float64)
    labels = None if g.labels is None else g.labels.copy()
    return Graph(g.indptr.copy(), g.indices.copy(), features.copy(), labels, g.class_count, dict(g.meta))
