"""Invariant suite behind ``lgtl check``: each check returns ``(name, passed, detail)``."""

from __future__ import annotations

import time
from collections import Counter
from fractions import Fraction

import numpy as np

from .attention import ProjectionWeights, attend, estimate_lipschitz
from .bounds import ho_case, nd_case
from .graph import SbmConfig, generate_regular_tree, generate_sbm, hop_distances
from .hopmatrix import (check_phi, check_properties, effective_attention_ho, effective_attention_nd, m_ho, m_nd,
                        oracle_ho_coefficients, phi, regular_tree_hop_sizes)
from .model import LgtlParams, personalized_pagerank, specialize_to_ho, specialize_to_nd
from .rng import make_rng
from .templates import ho_tokens, nd_tokens
from .training import TrainConfig, grad_check


def check_oracle():
    for n in (2, 3, 5):
        for K in range(7):
            tree = generate_regular_tree(n, max(K, 1))
            if oracle_ho_coefficients(tree, 0, K) != [list(r) for r in m_ho(n, K).entries]:
                return False, f"n={n} K={K}"
    return True, "n in {2,3,5}, K <= 6"


def check_closed_forms():
    for n in range(2, 7):
        t = m_ho(n, 8)
        if t[1][1] != Fraction(1, n) or t[3][1] != Fraction(2 * n - 1, n ** 3):
            return False, f"n={n} base values"
        for k in range(2, 9):
            if t[k][k - 2] / t[k][k] != (k - 1) * n - (k - 2):
                return False, f"n={n} k={k} ratio"
    return True, "n in 2..6, k <= 8"


def check_tables(kind):
    build = m_ho if kind == "ho" else m_nd
    for n in range(2, 7):
        rep = check_properties(build(n, 10))
        if not rep.ok:
            return False, f"n={n} {rep.counterexample}"
    return True, "n in 2..6, K = 10"


def check_phi_all():
    for n in range(2, 7):
        for L in range(11):
            rep = check_phi(n, L)
            if not rep.ok:
                return False, f"n={n} L={L} {rep.counterexample}"
    return True, "n in 2..6, L <= 10"


def check_nd_counts():
    for n in (2, 3):
        for K in range(1, 5):
            tree = generate_regular_tree(n, K)
            dist = hop_distances(tree, 0)
            _, nd = nd_tokens(tree, 0, [n] * K, seed=K)
            table = m_nd(n, K)
            for i, layer in enumerate(nd.layers):
                for v, c in Counter(layer).items():
                    if table[i][dist[v]] != c:
                        return False, f"n={n} K={K} layer {i}"
    return True, "n in {2,3}, K <= 4"


def check_effective_attention(tol=1e-9):
    n, L = 3, 3
    tree = generate_regular_tree(n, L, feature_dim=4, seed=1)
    w = ProjectionWeights.random(4, 2, scale=1.0)
    tl = ho_tokens(tree, 0, L)
    res = attend(tl, w)
    alpha = res.center
    hat = effective_attention_ho(list(alpha), m_ho(n, L))
    dist = hop_distances(tree, 0)
    direct = sum(hat[dist[v]] * tree.features[v] for v in range(tree.num_nodes)) @ w.W_V
    err = float(np.abs(direct - res.output[0]).max())
    mass = sum(s * a for s, a in zip(regular_tree_hop_sizes(n, L), hat))
    exact = sum(s * a for s, a in zip(regular_tree_hop_sizes(n, L),
                                      effective_attention_ho([Fraction(1, 4)] * 4, m_ho(n, L))))
    ok = err < tol and abs(mass - 1) < tol and exact == 1
    return ok, f"max abs error {err:.2e}"


def check_specialization(tol=1e-10):
    worst = 0.0
    for n in (2, 3):
        for L in range(0, 5):
            alpha = make_rng(L, n).dirichlet(np.ones(L + 1))
            sw = specialize_to_ho(n, L, alpha)
            target = np.array([float(x) for x in effective_attention_ho(list(alpha), m_ho(n, L))])
            worst = max(worst, float(np.abs(sw.per_hop - target).max()))
            if L == 0:
                continue
            tree = generate_regular_tree(n, L, feature_dim=3, seed=L)
            tl, _ = nd_tokens(tree, 0, [n] * L, seed=1)
            a = attend(tl, ProjectionWeights.random(3, L, scale=1.0)).center
            direct = {p[0][0]: float(x) for p, x in zip(tl.provenance, a)}
            dist = hop_distances(tree, 0)
            hop_of = {v: int(dist[v]) for v in direct}
            want = effective_attention_nd(direct, hop_of, phi(n, L))
            got = specialize_to_nd(n, L, direct, hop_of, alpha).per_node()
            worst = max(worst, max(abs(float(want[v]) - got.get(v, 0.0)) for v in want))
    return worst < tol, f"max abs error {worst:.2e}"


def check_gradients(tol=1e-4):
    g = generate_sbm(SbmConfig(15, 2, 0.2, 0.1, 4, 2.0, 1.0, seed=3))
    p = LgtlParams.init(4, 2, (3, 3), 2, seed=1, classifier_scale=1.0)
    rep = grad_check(g, p, 1e-5, TrainConfig(hop_count=2, sample_sizes=(3, 3), seed=5))
    return rep.max_rel_error < tol, f"max rel error {rep.max_rel_error:.2e} at {rep.worst_name}"


def check_bounds(graphs=10, nodes=10):
    bad = 0
    for s in range(graphs):
        h = 0.8 if s % 2 == 0 else 0.1
        g = generate_sbm(SbmConfig(30, 2, 0.2 * h, 0.2 * (1 - h), 4, 2.0, 0.0, seed=s))
        lip = estimate_lipschitz(g)
        w = ProjectionWeights.random(4, s, scale=1.0)
        for u in make_rng(s, 5).choice(g.num_nodes, nodes, replace=False):
            u = int(u)
            if g.degree(u) == 0:
                continue
            c = ho_case(g, u, 3, w, lip)
            bad += c.uniform_smoothness > c.bound + 1e-9
            bad += not nd_case(g, u, (2, 2, 2), s, w, lip).holds
    return bad == 0, f"{bad} violations"


def check_ppr():
    g = generate_sbm(SbmConfig(20, 2, 0.2, 0.1, 2, seed=0))
    p = personalized_pagerank(g, 0, 0.85, 60)
    total = sum(p.values())
    return abs(total - 1) < 1e-8, f"mass {total:.12f}"


CHECKS = {
    "hop_oracle": check_oracle,
    "closed_forms": check_closed_forms,
    "ho_table_properties": lambda: check_tables("ho"),
    "nd_table_properties": lambda: check_tables("nd"),
    "phi_properties": check_phi_all,
    "nd_counts": check_nd_counts,
    "effective_attention": check_effective_attention,
    "specialization": check_specialization,
    "gradients": check_gradients,
    "bounds": check_bounds,
    "ppr_mass": check_ppr,
}


def run_checks(names=None):
    """Run the named checks (all by default); yields ``(name, passed, detail, seconds)``."""
    for name in names or CHECKS:
        t = time.perf_counter()
        ok, detail = CHECKS[name]()
        yield name, bool(ok), detail, time.perf_counter() - t
