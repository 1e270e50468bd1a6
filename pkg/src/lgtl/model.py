"""Learnable token list: gate and selection GAT modules, attention adjustment,
frozen-backbone variant, specialization to the fixed templates, cluster tokens.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .attention import ProjectionWeights, attend, softmax
from .errors import DomainError, ParseError, PreconditionError, ShapeError
from .graph import Graph, hop_sets
from .hopmatrix import HopContribTable, effective_attention_ho, m_ho, phi, regular_tree_hop_sizes
from .rng import make_rng
from .templates import TokenList

FULL, NO_GATE, NO_SELECTION = "full", "no_gate", "no_selection"
ABLATIONS = (FULL, NO_GATE, NO_SELECTION)


@dataclass(frozen=True, eq=False)
class GatLayer:
    """Single-head graph attention with dynamic scoring.

    ``e_uv = a . LeakyReLU(W^T x_u + W^T x_v)``, softmax over the neighbor set of
    ``u`` (self-loop included), output ``sum_v att_uv W^T x_v + bias``. The
    nonlinearity sits before ``a`` so the ranking of neighbors can depend on ``u``.
    """

    W: np.ndarray
    a: np.ndarray
    bias: np.ndarray
    leaky_slope: float = 0.2

    def __post_init__(self):
        if self.W.ndim != 2 or self.a.shape != (self.W.shape[1],) or self.bias.shape != (self.W.shape[1],):
            raise ShapeError(f"GAT shapes W{self.W.shape} a{self.a.shape} bias{self.bias.shape} disagree")

    @property
    def h_in(self) -> int:
        return self.W.shape[0]

    @property
    def h_out(self) -> int:
        return self.W.shape[1]

    @classmethod
    def init(cls, h_in: int, h_out: int, rng: np.random.Generator, scale: float = 1.0,
             a_scale: float | None = None) -> "GatLayer":
        """Gaussian ``W``; ``a`` uses ``a_scale`` (default ``scale``), zero gives uniform attention."""
        W = scale * rng.standard_normal((h_in, h_out)) / math.sqrt(h_in)
        a = (scale if a_scale is None else a_scale) * rng.standard_normal(h_out) / math.sqrt(h_out)
        return cls(W, a, np.zeros(h_out))

    @classmethod
    def zeros(cls, h_in: int, h_out: int) -> "GatLayer":
        return cls(np.zeros((h_in, h_out)), np.zeros(h_out), np.zeros(h_out))

    def coefficients(self, x_u, X) -> np.ndarray:
        """Attention of ``u`` over the rows of ``X`` (which should include ``x_u``)."""
        hu = np.asarray(x_u) @ self.W
        H = np.asarray(X) @ self.W
        z = hu[None, :] + H
        e = np.where(z > 0, z, self.leaky_slope * z) @ self.a
        return softmax(e)

    def forward(self, x_u, X) -> np.ndarray:
        att = self.coefficients(x_u, X)
        return att @ (np.asarray(X) @ self.W) + self.bias


@dataclass(frozen=True, eq=False)
class LgtlParams:
    gate: GatLayer
    selection: GatLayer
    projections: ProjectionWeights
    classifier: np.ndarray
    hop_count: int
    sample_sizes: tuple

    def __post_init__(self):
        if self.gate.h_out != self.hop_count + 1:
            raise ShapeError(f"gate width {self.gate.h_out} != hop_count + 1")
        if len(self.sample_sizes) != self.hop_count:
            raise ShapeError("need one sample size per hop")
        if self.classifier.ndim != 2 or self.classifier.shape[1] != self.projections.h:
            raise ShapeError("classifier must be class_count x h")
        for arr in self.arrays():
            if not np.isfinite(arr).all():
                raise ShapeError("parameters must be finite")

    @classmethod
    def init(cls, feature_dim: int, hop_count: int, sample_sizes, class_count: int, seed: int,
             selection_width: int = 16, gat_scale: float = 1.0, classifier_scale: float = 0.1,
             attention_scale: float | None = None) -> "LgtlParams":
        """Random parameters; ``attention_scale=0`` starts both GATs at uniform attention."""
        rng = make_rng(seed, 7)
        gate = GatLayer.init(feature_dim, hop_count + 1, rng, gat_scale, attention_scale)
        sel = GatLayer.init(feature_dim, selection_width, rng, gat_scale, attention_scale)
        proj = ProjectionWeights.random(feature_dim, seed)
        clf = classifier_scale * rng.standard_normal((class_count, feature_dim))
        return cls(gate, sel, proj, clf, hop_count, tuple(int(s) for s in sample_sizes))

    # flat-vector view
    def named_arrays(self):
        return [
            ("gate.W", self.gate.W), ("gate.a", self.gate.a), ("gate.bias", self.gate.bias),
            ("selection.W", self.selection.W), ("selection.a", self.selection.a),
            ("selection.bias", self.selection.bias),
            ("W_Q", self.projections.W_Q), ("W_K", self.projections.W_K), ("W_V", self.projections.W_V),
            ("classifier", self.classifier),
        ]

    def arrays(self):
        return [a for _, a in self.named_arrays()]

    def shapes(self) -> dict:
        return {name: list(a.shape) for name, a in self.named_arrays()}

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_flat(self, vec) -> "LgtlParams":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.flat().size,):
            raise ShapeError(f"flat vector has {vec.size} entries, expected {self.flat().size}")
        parts, pos = {}, 0
        for name, a in self.named_arrays():
            parts[name] = vec[pos:pos + a.size].reshape(a.shape).copy()
            pos += a.size
        return self._assemble(parts)

    def _assemble(self, parts) -> "LgtlParams":
        gate = GatLayer(parts["gate.W"], parts["gate.a"], parts["gate.bias"], self.gate.leaky_slope)
        sel = GatLayer(parts["selection.W"], parts["selection.a"], parts["selection.bias"],
                       self.selection.leaky_slope)
        proj = ProjectionWeights(parts["W_Q"], parts["W_K"], parts["W_V"])
        return LgtlParams(gate, sel, proj, parts["classifier"], self.hop_count, self.sample_sizes)

    def replace(self, **arrays) -> "LgtlParams":
        """Copy with some named arrays swapped, e.g. ``replace(classifier=C)``."""
        parts = {name: a for name, a in self.named_arrays()}
        for key, value in arrays.items():
            name = key.replace("__", ".")
            if name not in parts:
                raise KeyError(name)
            parts[name] = np.asarray(value, dtype=np.float64)
        return self._assemble(parts)


def save_params(p: LgtlParams, path):
    """JSON header line with shapes, then one float per line."""
    header = {"shapes": p.shapes(), "hop_count": p.hop_count, "sample_sizes": list(p.sample_sizes),
              "leaky_slope": [p.gate.leaky_slope, p.selection.leaky_slope]}
    lines = [json.dumps(header, sort_keys=True)] + [repr(float(x)) for x in p.flat()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_params(path) -> LgtlParams:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ParseError("empty parameter file", 1)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ParseError(f"bad header: {exc}", 1) from None
    values = []
    for i, text in enumerate(lines[1:], start=2):
        if not text.strip():
            continue
        try:
            values.append(float(text))
        except ValueError:
            raise ParseError(f"not a float: {text!r}", i) from None
    shapes = header.get("shapes", {})
    ordered = ["gate.W", "gate.a", "gate.bias", "selection.W", "selection.a", "selection.bias",
               "W_Q", "W_K", "W_V", "classifier"]
    if sorted(shapes) != sorted(ordered):
        raise ParseError("header does not describe an LGTL parameter record", 1)
    total = sum(int(np.prod(shapes[name])) for name in ordered)
    if total != len(values):
        raise ShapeError(f"header expects {total} values, file has {len(values)}")
    # header keys are sorted on disk; values follow flat() order
    parts, pos = {}, 0
    for name in ordered:
        size = int(np.prod(shapes[name]))
        parts[name] = np.array(values[pos:pos + size]).reshape(shapes[name])
        pos += size
    slopes = header.get("leaky_slope", [0.2, 0.2])
    gate = GatLayer(parts["gate.W"], parts["gate.a"], parts["gate.bias"], slopes[0])
    sel = GatLayer(parts["selection.W"], parts["selection.a"], parts["selection.bias"], slopes[1])
    proj = ProjectionWeights(parts["W_Q"], parts["W_K"], parts["W_V"])
    return LgtlParams(gate, sel, proj, parts["classifier"], int(header["hop_count"]),
                      tuple(header["sample_sizes"]))


# --
# Forward pieces

def gate_neighborhood(g: Graph, u: int) -> np.ndarray:
    """``u`` followed by its 1-hop neighbors: the rows that feed ``u`` in the gate GAT."""
    return np.concatenate([[u], g.neighbors(u)]).astype(np.int64)


def gate_scores(g: Graph, u: int, gate: GatLayer, L: int) -> np.ndarray:
    """Softmax of the gate GAT's embedding of ``u`` over its 1-hop subgraph."""
    if gate.h_out != L + 1:
        raise ShapeError(f"gate width {gate.h_out} != L + 1 = {L + 1}")
    nodes = gate_neighborhood(g, u)
    raw = gate.forward(g.features[u], g.features[nodes])
    return softmax(raw)


@dataclass(frozen=True)
class HopSelection:
    token: np.ndarray
    beta: dict
    sampled: tuple
    degenerate: bool


def sample_hop(g: Graph, u: int, i: int, n_i: int, seed: int, members=None) -> tuple:
    """Up to ``n_i`` distinct hop-``i`` nodes of ``u``, drawn uniformly, sorted."""
    if members is None:
        members = hop_sets(g, u, i)[i].members
    take = min(n_i, len(members))
    if take == 0:
        return ()
    picked = make_rng(seed, u, i).choice(np.asarray(members), size=take, replace=False)
    return tuple(sorted(int(v) for v in picked))


def select_hop_token(g: Graph, u: int, i: int, n_i: int, sel: GatLayer, seed: int,
                     uniform: bool = False, members=None) -> HopSelection:
    """Hop token ``T_i = sum beta_v x_v`` over the star of ``u`` and its sampled hop-``i`` nodes.

    ``uniform`` replaces the selection GAT by equal weights over the star.
    """
    if i < 1:
        raise PreconditionError("hop tokens start at hop 1")
    sampled = sample_hop(g, u, i, n_i, seed, members)
    if not sampled:
        return HopSelection(np.zeros(g.feature_dim), {u: 1.0}, (), True)
    star = np.array((u,) + sampled)
    X = g.features[star]
    beta = np.full(len(star), 1.0 / len(star)) if uniform else sel.coefficients(g.features[u], X)
    token = beta @ X
    out = {}
    for v, b in zip(star.tolist(), beta.tolist()):
        out[v] = out.get(v, 0.0) + b
    return HopSelection(token, out, sampled, False)


def adjust_attention(alpha, s_hat) -> np.ndarray:
    """Reweight token attention by the gate: ``alpha * s / <alpha, s>``."""
    alpha = np.asarray(alpha, dtype=np.float64)
    s_hat = np.asarray(s_hat, dtype=np.float64)
    if alpha.shape != s_hat.shape:
        raise ShapeError("alpha and s_hat must have the same length")
    denom = float(alpha @ s_hat)
    if not denom > 0:
        raise DomainError("alpha and s_hat are orthogonal; adjusted attention undefined")
    return alpha * s_hat / denom


@dataclass(frozen=True, eq=False)
class LgtlOutput:
    tokens: TokenList
    gate_weights: np.ndarray
    betas: tuple
    raw_attention: np.ndarray
    adjusted: np.ndarray
    representation: np.ndarray
    degenerate: tuple = field(default=())

    def effective_attention(self) -> dict:
        """Per-node weight ``sum_i adjusted_i beta_{i,v}`` behind the representation."""
        out: dict = {}
        for a, beta in zip(self.adjusted, self.betas):
            for v, b in beta.items():
                out[v] = out.get(v, 0.0) + float(a) * b
        return out


def _lgtl_tokens(g: Graph, u: int, p: LgtlParams, seed: int, ablation: str):
    if ablation not in ABLATIONS:
        raise PreconditionError(f"unknown ablation {ablation!r}")
    L = p.hop_count
    hops = hop_sets(g, u, L)
    s_hat = np.full(L + 1, 1.0 / (L + 1)) if ablation == NO_GATE else gate_scores(g, u, p.gate, L)
    tokens = [g.features[u].astype(np.float64)]
    betas = [{u: 1.0}]
    prov = [((u, 1.0),)]
    flags = [False]
    for i in range(1, L + 1):
        hs = select_hop_token(g, u, i, p.sample_sizes[i - 1], p.selection, seed,
                              uniform=ablation == NO_SELECTION, members=hops[i].members)
        tokens.append(hs.token)
        betas.append(hs.beta)
        prov.append(() if hs.degenerate else tuple(sorted(hs.beta.items())))
        flags.append(hs.degenerate)
    T = np.stack(tokens)
    T.setflags(write=False)
    return TokenList(u, T, tuple(prov), tuple(range(L + 1))), s_hat, tuple(betas), tuple(flags)


def lgtl_forward(g: Graph, u: int, p: LgtlParams, seed: int, ablation: str = FULL) -> LgtlOutput:
    """Gate, select, attend from the center token, adjust, aggregate values."""
    g._check_node(u)
    tl, s_hat, betas, flags = _lgtl_tokens(g, u, p, seed, ablation)
    alpha = attend(tl, p.projections).center
    adjusted = adjust_attention(alpha, s_hat)
    z = adjusted @ (tl.tokens @ p.projections.W_V)
    return LgtlOutput(tl, s_hat, betas, alpha, adjusted, z, flags)


def lgtl_frozen_forward(g: Graph, u: int, p: LgtlParams, seed: int, ablation: str = FULL) -> LgtlOutput:
    """Frozen-backbone variant: scale each hop token by its gate weight, attend unchanged.

    ``adjusted`` holds ``alpha_i * s_i``, the multiplier of the unscaled token ``T_i``.
    """
    g._check_node(u)
    tl, s_hat, betas, flags = _lgtl_tokens(g, u, p, seed, ablation)
    scaled = s_hat[:, None] * tl.tokens
    res = attend(scaled, p.projections)
    alpha = res.center
    stl = TokenList(u, scaled, tuple(tuple((v, w * float(s)) for v, w in pr) for pr, s in zip(tl.provenance, s_hat)),
                    tl.layers)
    return LgtlOutput(stl, s_hat, betas, alpha, alpha * s_hat, res.output[0], flags)


def logits(p: LgtlParams, z) -> np.ndarray:
    return p.classifier @ np.asarray(z)


# --
# Specialization to the fixed templates

@dataclass(frozen=True)
class SpecializedWeights:
    """Gate multipliers and within-hop weights that make LGTL mimic a template."""

    s_hat: np.ndarray
    alpha: np.ndarray
    adjusted: np.ndarray
    beta: tuple  # per hop: node -> weight
    per_hop: np.ndarray  # composed weight of one node at each hop (HO) or per node (ND)

    def per_node(self) -> dict:
        out: dict = {}
        for a, beta in zip(self.adjusted, self.beta):
            for v, b in beta.items():
                out[v] = out.get(v, 0.0) + float(a) * b
        return out


def _positive_alpha(alpha, L):
    alpha = np.full(L + 1, 1.0 / (L + 1)) if alpha is None else np.asarray(alpha, dtype=np.float64)
    if alpha.shape != (L + 1,):
        raise ShapeError(f"alpha must have {L + 1} entries")
    if (alpha <= 0).any():
        raise PreconditionError("gate multipliers can only rescale hops the backbone attends to")
    return alpha


def specialize_to_ho(n: int, L: int, alpha=None, hop_members: Sequence[Sequence[int]] | None = None) -> SpecializedWeights:
    """Uniform within-hop weights plus gate multipliers that reproduce HO attention.

    The gate must send hop mass ``alpha_hat_k |N^k|`` to hop ``k``, so
    ``s_k`` is proportional to that mass over ``alpha_k``. ``hop_members`` names
    the nodes of each hop; placeholders ``(k, j)`` are used otherwise.
    """
    alpha = _positive_alpha(alpha, L)
    sizes = regular_tree_hop_sizes(n, L)
    target = np.array([float(x) for x in effective_attention_ho(list(alpha), m_ho(n, L))])
    mass = target * np.array(sizes, dtype=np.float64)
    s = mass / alpha
    s_hat = s / s.sum()
    if hop_members is None:
        hop_members = [[(k, j) for j in range(sizes[k])] for k in range(L + 1)]
    beta = tuple({v: 1.0 / len(members) for v in members} for members in hop_members)
    return SpecializedWeights(s_hat, alpha, adjust_attention(alpha, s_hat), beta,
                              adjust_attention(alpha, s_hat) / np.array(sizes, dtype=np.float64))


def specialize_to_nd(n: int, L: int, direct: Mapping, hop_of: Mapping, alpha=None) -> SpecializedWeights:
    """Within-hop weights from ND's direct scores and gate multipliers from ``phi``.

    ``direct[v]`` is the softmax weight of one token of node ``v`` in the ND list.
    Hop ``k`` then carries mass ``phi_k * sum_{v in hop k} direct[v]``.
    """
    alpha = _positive_alpha(alpha, L)
    w = phi(n, L)
    beta = [dict() for _ in range(L + 1)]
    for v, a in direct.items():
        if v not in hop_of:
            raise PreconditionError(f"node {v} has no hop tag")
        beta[hop_of[v]][v] = float(a)
    mass = np.zeros(L + 1)
    for k in range(L + 1):
        tot = sum(beta[k].values())
        mass[k] = float(w[k]) * tot
        if tot > 0:
            beta[k] = {v: a / tot for v, a in beta[k].items()}
    if (mass <= 0).any():
        raise PreconditionError("every hop needs positive direct attention")
    s = mass / alpha
    s_hat = s / s.sum()
    adjusted = adjust_attention(alpha, s_hat)
    return SpecializedWeights(s_hat, alpha, adjusted, tuple(beta), adjusted.copy())


# --
# Extra tokens

@dataclass(frozen=True, eq=False)
class ExtendedTokens:
    tokens: TokenList
    base_count: int
    skipped: tuple  # indices of empty clusters


def append_cluster_tokens(tokens: TokenList, clusters: Sequence, ppr: Mapping, s_hat, features) -> ExtendedTokens:
    """Scale hop tokens by ``s_hat`` and append one PPR-weighted token per cluster.

    ``ppr`` maps node to score (a single map shared by all clusters) or is a list
    with one map per cluster. Empty clusters are skipped and reported.
    """
    s_hat = np.asarray(s_hat, dtype=np.float64)
    if len(s_hat) != len(tokens):
        raise ShapeError("one gate weight per base token")
    features = np.asarray(features, dtype=np.float64)
    rows = list(s_hat[:, None] * tokens.tokens)
    prov = [tuple((v, w * float(s)) for v, w in pr) for pr, s in zip(tokens.provenance, s_hat)]
    layers = list(tokens.layers)
    skipped = []
    for j, cluster in enumerate(clusters):
        scores = ppr[j] if isinstance(ppr, (list, tuple)) else ppr
        members = sorted(int(v) for v in cluster)
        if not members:
            skipped.append(j)
            continue
        pr = []
        for v in members:
            s = float(scores.get(v, 0.0))
            if s < 0:
                raise PreconditionError(f"negative PPR score for node {v}")
            pr.append((v, s))
        rows.append(sum(s * features[v] for v, s in pr))
        prov.append(tuple(pr))
        layers.append(-1 - j)
    T = np.vstack(rows)
    T.setflags(write=False)
    return ExtendedTokens(TokenList(tokens.center, T, tuple(prov), tuple(layers)), len(tokens), tuple(skipped))


def aggregate(tokens, alpha, W_V) -> np.ndarray:
    """``sum_i alpha_i T_i W_V`` for a given attention vector over the tokens."""
    T = np.asarray(getattr(tokens, "tokens", tokens))
    return np.asarray(alpha) @ (T @ W_V)


def personalized_pagerank(g: Graph, u: int, damping: float = 0.85, iters: int = 100) -> dict:
    """Personalized PageRank of every node with respect to ``u`` by power iteration.

    Iterates ``p <- (1 - d) e_u + d p D^{-1} A``; mass reaching a node without
    neighbors is sent back to ``u``.
    """
    g._check_node(u)
    if not 0.0 <= damping < 1.0:
        raise PreconditionError("damping must lie in [0, 1)")
    from .templates import propagation_matrix

    P = propagation_matrix(g).T.tocsr()
    dangling = g.degrees() == 0
    p = np.zeros(g.num_nodes)
    p[u] = 1.0
    for _ in range(iters):
        nxt = damping * (P @ p)
        nxt[u] += (1.0 - damping) + damping * p[dangling].sum()
        p = nxt
    return {int(v): float(p[v]) for v in np.flatnonzero(p)}
