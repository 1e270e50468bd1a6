"""Predefined token lists: no template, hop overview (HO) and neighborhood detail (ND)."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np
import scipy.sparse as sp

from .errors import DegenerateStructureError, PreconditionError
from .graph import Graph
from .rng import make_rng


@dataclass(frozen=True, eq=False)
class TokenList:
    """Tokens ``T_0..T_L`` for one center node plus where each token came from.

    ``provenance[t]`` lists ``(node, weight)`` pairs with ``tokens[t] = sum w x_node``.
    ``layers[t]`` is the hop (HO, LGTL) or tree layer (ND) of token ``t``.
    """

    center: int
    tokens: np.ndarray
    provenance: tuple
    layers: tuple

    def __len__(self):
        return self.tokens.shape[0]

    def mass(self, t: int):
        return sum(w for _, w in self.provenance[t])

    def rebuild(self, features: np.ndarray) -> np.ndarray:
        """Recompute every token from its provenance and ``features``."""
        out = np.zeros((len(self), features.shape[1]))
        for t, prov in enumerate(self.provenance):
            for v, w in prov:
                out[t] += float(w) * features[v]
        return out

    def to_rows(self):
        """Flat ``(token, layer, node, weight)`` rows for CSV output."""
        for t, prov in enumerate(self.provenance):
            for v, w in prov:
                yield t, self.layers[t], v, w


@dataclass(frozen=True)
class NdTree:
    root: int
    layers: tuple[tuple[int, ...], ...]
    sample_sizes: tuple[int, ...]

    def parent_slot(self, k: int, slot: int) -> int:
        """Index in layer ``k-1`` of the entry that sampled ``layers[k][slot]``."""
        return slot // self.sample_sizes[k - 1]


def _from_provenance(g: Graph, u: int, provenance, layers) -> TokenList:
    provenance = tuple(tuple(p) for p in provenance)
    tmp = TokenList(u, np.zeros((len(provenance), g.feature_dim)), provenance, tuple(layers))
    tokens = tmp.rebuild(g.features)
    tokens.setflags(write=False)
    return TokenList(u, tokens, provenance, tuple(layers))


def none_tokens(g: Graph, u: int) -> TokenList:
    g._check_node(u)
    return _from_provenance(g, u, [[(u, 1)]], [0])


def ho_weights(g: Graph, u: int, L: int) -> list[dict[int, Fraction]]:
    """Exact node weights of each HO token, ``r_k = r_{k-1} D^{-1} A`` from ``r_0 = e_u``."""
    g._check_node(u)
    if L < 0:
        raise PreconditionError("hop count must be >= 0")
    rows = [{u: Fraction(1)}]
    for k in range(1, L + 1):
        nxt: dict[int, Fraction] = {}
        for v, w in rows[-1].items():
            nbrs = g.neighbors(v)
            if len(nbrs) == 0:
                raise DegenerateStructureError(f"mean aggregation at step {k} reaches isolated node {v}")
            share = w / len(nbrs)
            for x in nbrs:
                x = int(x)
                nxt[x] = nxt.get(x, Fraction(0)) + share
        rows.append(nxt)
    return rows


def ho_tokens(g: Graph, u: int, L: int) -> TokenList:
    """HO token list: ``T_k`` is the k-step mean aggregation at ``u``."""
    rows = ho_weights(g, u, L)
    return _from_provenance(g, u, [sorted(r.items()) for r in rows], range(L + 1))


def propagation_matrix(g: Graph) -> sp.csr_matrix:
    """Row-normalized adjacency ``D^{-1} A``; rows of isolated nodes are zero."""
    deg = g.degrees().astype(np.float64)
    data = np.repeat(np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0), g.degrees())
    return sp.csr_matrix((data, g.indices, g.indptr), shape=(g.num_nodes, g.num_nodes))


def ho_token_stack(g: Graph, L: int) -> np.ndarray:
    """HO tokens for every node at once, shape ``(N, L+1, d)``.

    Isolated nodes get zero tokens beyond ``T_0`` instead of an error.
    """
    P = propagation_matrix(g)
    out = [g.features]
    for _ in range(L):
        out.append(P @ out[-1])
    return np.stack(out, axis=1)


def nd_tree(g: Graph, u: int, sizes, seed: int) -> NdTree:
    """Sample a fixed-shape computation tree rooted at ``u``.

    Each slot draws ``n_k`` distinct neighbors of its parent uniformly; short
    neighborhoods are padded with the parent itself.
    """
    g._check_node(u)
    sizes = tuple(int(s) for s in sizes)
    if any(s < 1 for s in sizes):
        raise PreconditionError(f"sample sizes must be >= 1, got {sizes}")
    rng = make_rng(seed, u)
    layers = [(u,)]
    for n_k in sizes:
        layer = []
        for parent in layers[-1]:
            nbrs = g.neighbors(parent)
            take = min(n_k, len(nbrs))
            picked = rng.choice(nbrs, size=take, replace=False).tolist() if take else []
            layer.extend(int(v) for v in picked)
            layer.extend([parent] * (n_k - take))
        layers.append(tuple(layer))
    return NdTree(u, tuple(layers), sizes)


def nd_tokens(g: Graph, u: int, sizes, seed: int) -> tuple[TokenList, NdTree]:
    """ND token list: the sampled tree flattened breadth-first, one token per slot."""
    tree = nd_tree(g, u, sizes, seed)
    prov, layers = [], []
    for k, layer in enumerate(tree.layers):
        for v in layer:
            prov.append([(v, 1)])
            layers.append(k)
    return _from_provenance(g, u, prov, layers), tree


def nd_index_stack(g: Graph, sizes, seed: int) -> np.ndarray:
    """Flattened ND node ids for every center, shape ``(N, 1 + n_1 + n_1 n_2 + ...)``."""
    return np.array([sum(nd_tree(g, u, sizes, seed).layers, ()) for u in range(g.num_nodes)], dtype=np.int64)
