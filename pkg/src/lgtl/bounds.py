"""Per-node smoothness against the HO, ND and LGTL bounds.

Each ``*_case`` function runs one template at one center node and returns the
measured smoothness together with the bound evaluated on the same attention.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .attention import (BoundInputs, ProjectionWeights, attend, attention_scores, bound_ho, bound_lgtl,
                        bound_nd, eta_gamma_from_scores, smoothness)
from .errors import DomainError
from .graph import Graph, hop_distances
from .hopmatrix import phi
from .model import LgtlParams, lgtl_forward
from .templates import ho_weights, nd_tokens


@dataclass(frozen=True)
class BoundCase:
    node: int
    template: str
    smoothness: float
    bound: float
    printed_bound: float = float("nan")
    uniform_smoothness: float = float("nan")

    @property
    def holds(self) -> bool:
        return self.smoothness <= self.bound + 1e-9


def _hop_profile(g: Graph, u: int, L: int):
    dist = hop_distances(g, u, L)
    labels = g.require_labels()
    sizes, cons = [], []
    for k in range(L + 1):
        members = np.flatnonzero(dist == k)
        sizes.append(len(members))
        cons.append(float(np.mean(labels[members] == labels[u])) if len(members) else 1.0)
    return dist, sizes, cons


def ho_case(g: Graph, u: int, L: int, w: ProjectionWeights, lipschitz: float) -> BoundCase:
    """HO attention at ``u`` against the hop-overview bound.

    Per-hop effective attention is the node-weight mass landing on hop ``i``
    divided by ``|N^i|``. ``smoothness`` uses the exact per-node weights,
    ``uniform_smoothness`` spreads each hop's mass evenly as the bound assumes.
    """
    rows = ho_weights(g, u, L)
    tl_tokens = np.stack([sum((float(c) * g.features[v] for v, c in r.items()), np.zeros(g.feature_dim))
                          for r in rows])
    alpha = attend(tl_tokens, w).center
    per_node: dict = {}
    for a, r in zip(alpha, rows):
        for v, c in r.items():
            per_node[v] = per_node.get(v, 0.0) + float(a) * float(c)
    dist, sizes, cons = _hop_profile(g, u, L)
    mass = np.zeros(L + 1)
    for v, wv in per_node.items():
        mass[dist[v]] += wv
    alpha_hat = [m / s if s else 0.0 for m, s in zip(mass, sizes)]
    uniform = {int(v): alpha_hat[dist[v]] for v in np.flatnonzero(dist >= 0)}
    b = BoundInputs(tuple(sizes), tuple(cons), lipschitz)
    return BoundCase(u, "ho", smoothness(g.features[u], per_node, g.features), bound_ho(alpha_hat, b),
                     uniform_smoothness=smoothness(g.features[u], uniform, g.features))


def nd_case(g: Graph, u: int, sizes, seed: int, w: ProjectionWeights, lipschitz: float) -> BoundCase:
    """ND attention at ``u`` against the neighborhood-detail bound.

    The regular-tree weights ``phi_k |N^k|`` are replaced by the realized number
    of token occurrences of hop-``k`` nodes, and ``eta``/``gamma`` are averaged
    over token occurrences (center included), which makes the bound's
    inconsistent-attention share exact on any graph.
    """
    labels = g.require_labels()
    tl, _ = nd_tokens(g, u, sizes, seed)
    alpha = attend(tl, w).center
    nodes = [prov[0][0] for prov in tl.provenance]
    per_node: dict = {}
    for v, a in zip(nodes, alpha):
        per_node[v] = per_node.get(v, 0.0) + float(a)
    L = len(sizes)
    dist = hop_distances(g, u, L)
    occ = np.zeros(L + 1)
    same = np.zeros(L + 1)
    for v in nodes:
        occ[dist[v]] += 1
        same[dist[v]] += labels[v] == labels[u]
    cons = tuple(float(s / o) if o else 1.0 for s, o in zip(same, occ))
    scores = attention_scores(g.features[u], g.features[nodes], w)
    match = labels[nodes] == labels[u]
    try:
        eta, gamma = eta_gamma_from_scores(scores, match)
    except DomainError:
        eta, gamma = 1.0, 1.0  # one label class only: the bound is 0 or sqrt(2) lip either way
    b = BoundInputs(tuple(occ), cons, lipschitz, eta, gamma)
    ones = [1.0] * (L + 1)
    return BoundCase(u, "nd", smoothness(g.features[u], per_node, g.features), bound_nd(ones, b),
                     printed_bound=bound_nd(ones, b, printed=True))


def nd_phi_bound(g: Graph, u: int, n: int, L: int, w: ProjectionWeights, lipschitz: float) -> float:
    """The bound with regular-tree occurrence weights ``phi`` and BFS hop sizes."""
    _, sizes, cons = _hop_profile(g, u, L)
    eta, gamma = _node_eta_gamma(g, u, L, w)
    return bound_nd(phi(n, L), BoundInputs(tuple(sizes), tuple(cons), lipschitz, eta, gamma))


def _node_eta_gamma(g, u, L, w):
    labels = g.require_labels()
    dist = hop_distances(g, u, L)
    nodes = np.flatnonzero(dist >= 0)
    scores = attention_scores(g.features[u], g.features[nodes], w)
    try:
        return eta_gamma_from_scores(scores, labels[nodes] == labels[u])
    except DomainError:
        return 1.0, 1.0


def lgtl_case(g: Graph, u: int, p: LgtlParams, seed: int, lipschitz: float) -> BoundCase:
    """LGTL at ``u`` against the gate-weighted bound.

    ``|G^i|`` counts the star of hop ``i`` (self-loop included), ``C^i`` its
    label agreement, and ``eta``/``gamma`` average the selection scores
    ``exp(e_uv)`` that produce the within-hop weights.
    """
    labels = g.require_labels()
    out = lgtl_forward(g, u, p, seed)
    per_node = out.effective_attention()
    sizes, cons, scores, match = [], [], [], []
    for i, beta in enumerate(out.betas):
        members = list(beta)
        sizes.append(len(members))
        cons.append(float(np.mean([labels[v] == labels[u] for v in members])))
        if i == 0:
            continue
        X = g.features[members]
        hu = g.features[u] @ p.selection.W
        z = hu[None, :] + X @ p.selection.W
        e = np.where(z > 0, z, p.selection.leaky_slope * z) @ p.selection.a
        scores.extend(np.exp(e).tolist())
        match.extend(labels[v] == labels[u] for v in members)
    try:
        eta, gamma = eta_gamma_from_scores(scores, match)
    except DomainError:
        eta, gamma = 1.0, 1.0
    b = BoundInputs(tuple(sizes), tuple(cons), lipschitz, eta, gamma)
    return BoundCase(u, "lgtl", smoothness(g.features[u], per_node, g.features),
                     bound_lgtl(out.gate_weights, b), printed_bound=bound_lgtl(out.gate_weights, b, printed=True))
