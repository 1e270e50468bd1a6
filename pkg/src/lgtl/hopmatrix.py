"""Exact hop-contribution tables for the HO and ND templates.

All arithmetic is done in :class:`fractions.Fraction` so that the decay and
growth comparisons are exact. Tables are dense, indexed ``[token_depth][hop]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Mapping, Sequence

from .errors import PreconditionError

HO = "ho"
ND = "nd"
ALPHA_TOL = 1e-9


@dataclass(frozen=True)
class HopContribTable:
    kind: str
    n: int
    K: int
    entries: tuple[tuple[Fraction, ...], ...]

    def __getitem__(self, k):
        return self.entries[k]

    def get(self, k: int, i: int) -> Fraction:
        """Entry with zero outside the stored triangle."""
        if 0 <= k <= self.K and 0 <= i <= self.K:
            return self.entries[k][i]
        return Fraction(0)

    def as_floats(self):
        return [[float(x) for x in row] for row in self.entries]


@dataclass(frozen=True)
class PhiVector:
    n: int
    L: int
    phi: tuple[Fraction, ...]

    def __getitem__(self, k):
        return self.phi[k]

    def __len__(self):
        return len(self.phi)


def _check_nk(n: int, K: int):
    if n < 2:
        raise PreconditionError(f"branching degree must be >= 2, got {n}")
    if K < 0:
        raise PreconditionError(f"depth must be >= 0, got {K}")


def _freeze(rows) -> tuple[tuple[Fraction, ...], ...]:
    return tuple(tuple(row) for row in rows)


@lru_cache(maxsize=None)
def m_ho(n: int, K: int) -> HopContribTable:
    """Coefficient of each hop-``i`` node in the ``k``-step mean aggregation.

    Valid on trees where every non-leaf has degree ``n``.
    """
    _check_nk(n, K)
    M = [[Fraction(0)] * (K + 2) for _ in range(K + 1)]
    M[0][0] = Fraction(1)
    for k in range(1, K + 1):
        M[k][0] = M[k - 1][1]
        for i in range(1, k + 1):
            M[k][i] = (M[k - 1][i - 1] + (n - 1) * M[k - 1][i + 1]) / n
    return HopContribTable(HO, n, K, _freeze(row[:K + 1] for row in M))


@lru_cache(maxsize=None)
def m_nd(n: int, K: int) -> HopContribTable:
    """How many times one hop-``j`` node occurs in layer ``i`` of the full ND tree."""
    _check_nk(n, K)
    M = [[Fraction(0)] * (K + 2) for _ in range(K + 1)]
    M[0][0] = Fraction(1)
    if K >= 1:
        M[1][1] = Fraction(1)
    for i in range(2, K + 1):
        M[i][0] = n * M[i - 1][1]
        for j in range(1, i + 1):
            M[i][j] = M[i - 1][j - 1] + (n - 1) * M[i - 1][j + 1]
    return HopContribTable(ND, n, K, _freeze(row[:K + 1] for row in M))


@lru_cache(maxsize=None)
def phi(n: int, L: int) -> PhiVector:
    """Total occurrence weight of a hop-``k`` node across the flattened ND list."""
    table = m_nd(n, L)
    values = tuple(sum((table[i][k] for i in range(k, L + 1, 2)), Fraction(0)) for k in range(L + 1))
    return PhiVector(n, L, values)


def regular_tree_hop_sizes(n: int, K: int) -> list[int]:
    """``|N^k|`` around the root of a tree where every non-leaf has degree ``n``."""
    return [1] + [n * (n - 1) ** (k - 1) for k in range(1, K + 1)]


def _normalized(alpha: Sequence, what: str = "alpha"):
    total = sum(alpha)
    if any(a < 0 for a in alpha):
        raise PreconditionError(f"{what} has negative entries")
    if abs(float(total) - 1.0) > ALPHA_TOL:
        raise PreconditionError(f"{what} must sum to 1, got {float(total)!r}")


def effective_attention_ho(alpha: Sequence, table: HopContribTable) -> list:
    """Per-node weight that attention ``alpha`` over HO tokens puts on each hop.

    Exact when ``alpha`` holds Fractions, float otherwise.
    """
    if table.kind != HO:
        raise PreconditionError("effective_attention_ho needs an HO table")
    alpha = list(alpha)
    if len(alpha) > table.K + 1:
        raise PreconditionError(f"alpha has {len(alpha)} entries, table depth is {table.K}")
    _normalized(alpha)
    L = len(alpha) - 1
    zero = alpha[0] * 0
    return [sum((alpha[i] * table[i][k] for i in range(k, L + 1, 2)), zero) for k in range(L + 1)]


def effective_attention_nd(alpha_node: Mapping[int, float], hop_of: Mapping[int, int], weights: PhiVector) -> dict:
    """Scale each node's direct score by the occurrence weight of its hop."""
    out = {}
    for v, a in alpha_node.items():
        if v not in hop_of:
            raise PreconditionError(f"node {v} has no hop tag")
        k = hop_of[v]
        if not 0 <= k <= weights.L:
            raise PreconditionError(f"node {v} at hop {k} outside 0..{weights.L}")
        out[v] = weights[k] * a
    return out


def _tree_check(tree, u: int, K: int) -> int:
    from .graph import hop_distances

    if tree.num_edges != tree.num_nodes - 1 or (hop_distances(tree, u) < 0).any():
        raise PreconditionError("oracle needs a tree")
    n = tree.degree(u)
    dist = hop_distances(tree, u)
    deg = tree.degrees()
    inner = (dist >= 0) & (dist < K)
    if n < 2 or (deg[inner] != n).any():
        raise PreconditionError(f"nodes within {K - 1} hops of the root must all have degree {n}")
    return n


def oracle_ho_coefficients(tree, u: int, K: int) -> list[list[Fraction]]:
    """Brute-force HO coefficients by running the mean recursion on one-hot features.

    ``T(v, k)`` is the k-step aggregate at ``v`` as a sparse node->coefficient
    map. The result ``C[k][i]`` is the common coefficient of hop-``i`` nodes in
    ``T(u, k)``; a node-dependent coefficient means the input was not regular.
    """
    from .graph import hop_distances

    _tree_check(tree, u, K)
    dist = hop_distances(tree, u)
    memo: dict = {}

    def aggregate(v: int, k: int) -> dict:
        key = (v, k)
        if key in memo:
            return memo[key]
        if k == 0:
            out = {v: Fraction(1)}
        else:
            nbrs = tree.neighbors(v)
            share = Fraction(1, len(nbrs))
            out = {}
            for w in nbrs:
                for node, c in aggregate(int(w), k - 1).items():
                    out[node] = out.get(node, Fraction(0)) + share * c
        memo[key] = out
        return out

    table = [[Fraction(0)] * (K + 1) for _ in range(K + 1)]
    for k in range(K + 1):
        coeffs = aggregate(u, k)
        seen: dict[int, Fraction] = {}
        for node, c in coeffs.items():
            i = int(dist[node])
            if i in seen and seen[i] != c:
                raise PreconditionError(f"hop {i} nodes carry unequal weights in T_{k}")
            seen[i] = c
        for i, c in seen.items():
            table[k][i] = c
    return table


@dataclass(frozen=True)
class PropertyReport:
    kind: str
    parity: bool
    row_decay: bool
    column_monotonicity: bool
    counterexample: tuple | None = None

    @property
    def ok(self) -> bool:
        return self.parity and self.row_decay and self.column_monotonicity


def check_properties(table: HopContribTable) -> PropertyReport:
    """Check parity support, within-row decay and the column trend of ``table``.

    HO columns decay (``M[k][i] > M[k+2][i]``); ND columns grow.
    """
    K = table.K
    first = None

    def note(name, k, i):
        nonlocal first
        if first is None:
            first = (name, k, i)

    parity = True
    for k in range(K + 1):
        for i in range(K + 1):
            nonzero = table[k][i] != 0
            if nonzero != (i <= k and (k - i) % 2 == 0):
                parity = False
                note("parity", k, i)

    row = True
    for k in range(K + 1):
        for i in range(k % 2, k - 1, 2):
            if not table[k][i] > table[k][i + 2]:
                row = False
                note("row_decay", k, i)

    col = True
    for k in range(K - 1):
        for i in range(k % 2, k + 1, 2):
            a, b = table[k][i], table[k + 2][i]
            good = a > b if table.kind == HO else a < b
            if not good:
                col = False
                note("column_monotonicity", k, i)
    return PropertyReport(table.kind, parity, row, col, first)


@dataclass(frozen=True)
class PhiReport:
    near_hop_dominance: bool
    parity_identity: bool
    counterexample: tuple | None = None

    @property
    def ok(self) -> bool:
        return self.near_hop_dominance and self.parity_identity


def check_phi(n: int, L: int) -> PhiReport:
    """Near-hop dominance of ``phi`` and its exact parity recurrence.

    For odd ``L`` each odd-hop weight equals ``phi[2t] + (n-1) phi[2t+2]``; for
    even ``L`` the same holds with the roles of odd and even hops swapped.
    """
    w = phi(n, L)
    get = lambda k: w[k] if k <= L else Fraction(0)  # noqa: E731
    first = None
    dom = True
    for k in range(L - 1):
        if not w[k] > w[k + 2]:
            dom = False
            first = first or ("near_hop_dominance", k)
    ident = True
    for k in range(1 if L % 2 else 2, L + 1, 2):
        if w[k] != get(k - 1) + (n - 1) * get(k + 1):
            ident = False
            first = first or ("parity_identity", k)
    return PhiReport(dom, ident, first)


def ratio_closed_form(table: HopContribTable, k: int) -> Fraction:
    """``M[k][k-2] / M[k][k]`` read from the table."""
    return table[k][k - 2] / table[k][k]
