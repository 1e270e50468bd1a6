"""Single-layer scaled dot-product attention, the smoothness metric and its bounds.

The hop count and the Lipschitz constant share a symbol in the literature; here
they are always ``hop_count`` and ``lipschitz``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .errors import DomainError, NumericError, PreconditionError, ShapeError
from .graph import Graph, hop_sets
from .rng import make_rng

SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True, eq=False)
class ProjectionWeights:
    W_Q: np.ndarray
    W_K: np.ndarray
    W_V: np.ndarray

    def __post_init__(self):
        h = self.W_Q.shape[0]
        for name in ("W_Q", "W_K", "W_V"):
            m = getattr(self, name)
            if m.shape != (h, h):
                raise ShapeError(f"{name} must be {h}x{h}, got {m.shape}")
            if not np.isfinite(m).all():
                raise NumericError(f"{name} has non-finite entries")

    @property
    def h(self) -> int:
        return self.W_Q.shape[0]

    @classmethod
    def random(cls, h: int, seed: int, scale: float | None = None) -> "ProjectionWeights":
        """Gaussian init with std ``1/sqrt(h)`` unless ``scale`` is given."""
        rng = make_rng(seed, 101)
        s = 1.0 / math.sqrt(h) if scale is None else scale
        return cls(*(s * rng.standard_normal((h, h)) for _ in range(3)))

    @classmethod
    def identity(cls, h: int) -> "ProjectionWeights":
        eye = np.eye(h)
        return cls(eye.copy(), eye.copy(), eye.copy())


@dataclass(frozen=True, eq=False)
class AttentionResult:
    weights: np.ndarray
    output: np.ndarray

    @property
    def center(self) -> np.ndarray:
        """Attention of the center token (row 0) over the token list."""
        return self.weights[0]


@dataclass(frozen=True)
class BoundInputs:
    """Per-hop sizes and label consistencies plus the scalar constants of a bound."""

    sizes: tuple
    consistencies: tuple
    lipschitz: float
    eta: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        if len(self.sizes) != len(self.consistencies):
            raise ShapeError("sizes and consistencies must align")
        if any(not 0.0 <= c <= 1.0 for c in self.consistencies):
            raise PreconditionError("consistencies must lie in [0, 1]")
        if self.lipschitz < 0 or self.eta < 0:
            raise PreconditionError("lipschitz and eta must be nonnegative")
        if not self.gamma > 0:
            raise PreconditionError("gamma must be positive")


def softmax(x, axis=-1):
    x = np.asarray(x, dtype=np.float64)
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def attend(tokens, w: ProjectionWeights) -> AttentionResult:
    """``softmax(Q K^T / sqrt(h)) V`` over one token list."""
    T = np.asarray(getattr(tokens, "tokens", tokens), dtype=np.float64)
    if T.ndim != 2 or T.shape[1] != w.h:
        raise ShapeError(f"tokens must be m x {w.h}, got {T.shape}")
    if not np.isfinite(T).all():
        raise NumericError("tokens contain non-finite values")
    Q, K, V = T @ w.W_Q, T @ w.W_K, T @ w.W_V
    A = softmax(Q @ K.T / math.sqrt(w.h))
    return AttentionResult(A, A @ V)


def smoothness(u_feature, per_node_attention: Mapping[int, float], features) -> float:
    """``||x_u - sum_v w_v x_v||`` for an effective per-node attention map."""
    features = np.asarray(features, dtype=np.float64)
    agg = np.zeros(features.shape[1])
    for v, wv in per_node_attention.items():
        if wv < 0:
            raise PreconditionError(f"negative attention {wv} on node {v}")
        agg += float(wv) * features[v]
    return float(np.linalg.norm(np.asarray(u_feature, dtype=np.float64) - agg))


def bound_ho(alpha_hat: Sequence[float], b: BoundInputs) -> float:
    """Hop-overview bound: ``sqrt(2) lip sum_i alpha_hat_i |N^i| (1 - C^i)``."""
    if len(alpha_hat) != len(b.sizes):
        raise ShapeError("alpha_hat and per-hop inputs differ in length")
    total = sum(float(a) * s * (1.0 - c) for a, s, c in zip(alpha_hat, b.sizes, b.consistencies))
    return SQRT2 * b.lipschitz * total


def _split_mass(weights, b: BoundInputs):
    """Weighted inconsistent and consistent totals ``sum w |N| (1-C)`` and ``sum w |N| C``."""
    if len(weights) != len(b.sizes):
        raise ShapeError("weights and per-hop inputs differ in length")
    bad = sum(float(w) * s * (1.0 - c) for w, s, c in zip(weights, b.sizes, b.consistencies))
    good = sum(float(w) * s * c for w, s, c in zip(weights, b.sizes, b.consistencies))
    return bad, good


def bound_nd(phi, b: BoundInputs, printed: bool = False) -> float:
    """Neighborhood-detail bound ``sqrt(2) lip / (1 + ratio / (R - 1))``.

    ``R = sum phi|N| / sum phi|N|C`` with sums from hop 0. Inconsistent nodes
    score ``eta`` and consistent ones ``gamma``, so the inconsistent share of
    attention is ``1 / (1 + (gamma/eta) / (R - 1))``; that is the default. The
    widely quoted form uses ``eta/gamma`` instead and is kept under
    ``printed=True``. ``phi`` may be a PhiVector or any per-hop weights.
    """
    weights = getattr(phi, "phi", phi)
    bad, good = _split_mass(weights, b)
    if bad == 0.0:
        return 0.0  # R = 1: nothing inconsistent to attend to
    if good == 0.0:
        return SQRT2 * b.lipschitz
    if printed:
        ratio = b.eta / b.gamma
    else:
        if b.eta == 0.0:
            return 0.0
        ratio = b.gamma / b.eta
    return SQRT2 * b.lipschitz / (1.0 + ratio * good / bad)


def bound_lgtl(s_hat: Sequence[float], b: BoundInputs, printed: bool = False) -> float:
    """Learnable-token-list bound with gate weights rescaled to sum to ``L + 1``.

    ``s_hat`` is the softmax gate output. The default puts ``gamma/eta`` on the
    consistent mass (the share implied by the attention scores); ``printed=True``
    uses ``eta/gamma`` as commonly quoted.
    """
    s = np.asarray(s_hat, dtype=np.float64)
    if len(s) != len(b.sizes):
        raise ShapeError("s_hat and per-hop inputs differ in length")
    if s.sum() <= 0:
        raise PreconditionError("gate weights must have positive mass")
    s = s * (len(s) / s.sum())
    bad, good = _split_mass(np.ones(len(s)), b)
    num, _ = _split_mass(s, b)
    if printed:
        den = bad + (b.eta / b.gamma) * good
    else:
        den = bad + (b.gamma / b.eta) * good if b.eta > 0 else math.inf
    if den == 0.0:
        raise DomainError("bound denominator vanishes (no nodes in any subgraph)")
    return SQRT2 * b.lipschitz * num / den


def attention_scores(x_u, X, w: ProjectionWeights) -> np.ndarray:
    """``exp(q_u k_v / sqrt(h))`` for every row of ``X``."""
    q = np.asarray(x_u, dtype=np.float64) @ w.W_Q
    k = np.asarray(X, dtype=np.float64) @ w.W_K
    return np.exp(k @ q / math.sqrt(w.h))


def eta_gamma_from_scores(scores, same, counts=None) -> tuple[float, float]:
    """Mean score over differing (``eta``) and matching (``gamma``) entries.

    ``counts`` weights each entry, e.g. by how often a node occurs in a token list.
    """
    scores = np.asarray(scores, dtype=np.float64)
    same = np.asarray(same, dtype=bool)
    counts = np.ones(len(scores)) if counts is None else np.asarray(counts, dtype=np.float64)
    if counts[same].sum() == 0 or counts[~same].sum() == 0:
        raise DomainError("need both same-label and different-label entries")
    gamma = float(np.sum(scores[same] * counts[same]) / counts[same].sum())
    eta = float(np.sum(scores[~same] * counts[~same]) / counts[~same].sum())
    return eta, gamma


def estimate_eta_gamma(g: Graph, u: int, w: ProjectionWeights, hops: int) -> tuple[float, float]:
    """Empirical ``(eta, gamma)`` over the nodes in hops ``1..hops`` of ``u``."""
    labels = g.require_labels()
    nodes = [v for hs in hop_sets(g, u, hops)[1:] for v in hs.members]
    if not nodes:
        raise DomainError(f"node {u} has no neighbors within {hops} hops")
    nodes = np.array(nodes)
    scores = attention_scores(g.features[u], g.features[nodes], w)
    return eta_gamma_from_scores(scores, labels[nodes] == labels[u])


def estimate_lipschitz(g: Graph) -> float:
    """Smallest ``L`` with ``||x_u - x_v|| <= L ||y_u - y_v||`` over differing-label pairs."""
    labels = g.require_labels()
    X = g.features
    best = -1.0
    classes = np.unique(labels)
    for a in classes:
        Xa = X[labels == a]
        for c in classes[classes > a]:
            Xc = X[labels == c]
            best = max(best, float(cdist(Xa, Xc).max()))
    if best < 0:
        raise DomainError("no pair of nodes with different labels")
    return best / SQRT2
