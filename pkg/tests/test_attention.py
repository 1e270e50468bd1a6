import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from lgtl.attention import (BoundInputs, ProjectionWeights, attend, bound_ho, bound_lgtl, bound_nd,
                            estimate_eta_gamma, estimate_lipschitz, smoothness, softmax)
from lgtl.bounds import ho_case, lgtl_case, nd_case
from lgtl.errors import NumericError, PreconditionError, ShapeError
from lgtl.graph import Graph, SbmConfig, generate_regular_tree, generate_sbm, hop_distances, relabel
from lgtl.hopmatrix import effective_attention_ho, m_ho, phi
from lgtl.model import LgtlParams
from lgtl.templates import ho_tokens

SQ2 = math.sqrt(2.0)


def reference_attention(T, w):
    q, k, v = T @ w.W_Q, T @ w.W_K, T @ w.W_V
    out = np.zeros_like(v)
    weights = np.zeros((len(T), len(T)))
    for i in range(len(T)):
        logits = [q[i] @ k[j] / math.sqrt(w.h) for j in range(len(T))]
        e = [math.exp(x - max(logits)) for x in logits]
        weights[i] = np.array(e) / sum(e)
        out[i] = weights[i] @ v
    return weights, out


def test_single_token():
    w = ProjectionWeights.random(3, 0)
    T = np.array([[1.0, 2.0, 3.0]])
    res = attend(T, w)
    assert_allclose(res.weights, [[1.0]])
    assert_allclose(res.output, T @ w.W_V)


def test_identical_tokens_split_evenly():
    w = ProjectionWeights.random(2, 1)
    res = attend(np.ones((2, 2)), w)
    assert_allclose(res.weights, 0.5)


def test_matches_reference():
    w = ProjectionWeights.random(4, 3, scale=1.0)
    T = np.random.default_rng(0).standard_normal((3, 4))
    weights, out = reference_attention(T, w)
    res = attend(T, w)
    assert_allclose(res.weights, weights, rtol=1e-12, atol=1e-15)
    assert_allclose(res.output, out, rtol=1e-12, atol=1e-15)


def test_attend_errors():
    w = ProjectionWeights.random(3, 0)
    with pytest.raises(ShapeError):
        attend(np.zeros((2, 4)), w)
    with pytest.raises(NumericError):
        attend(np.array([[np.nan, 0, 0]]), w)
    with pytest.raises(ShapeError):
        ProjectionWeights(np.eye(2), np.eye(3), np.eye(2))


@settings(max_examples=50, deadline=None)
@given(x=st.lists(st.floats(-50, 50), min_size=1, max_size=8), c=st.floats(-100, 100))
def test_softmax_shift_invariance(x, c):
    assert_allclose(softmax(np.array(x) + c), softmax(x), rtol=1e-12, atol=1e-12)
    assert abs(softmax(x).sum() - 1) < 1e-12


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), m=st.integers(1, 6))
def test_attention_rows_stochastic(seed, m):
    rng = np.random.default_rng(seed)
    w = ProjectionWeights.random(3, seed, scale=1.0)
    T = rng.standard_normal((m, 3))
    res = attend(T, w)
    assert_allclose(res.weights.sum(axis=1), 1.0, atol=1e-9)
    assert_allclose(res.output, res.weights @ (T @ w.W_V), rtol=1e-9, atol=1e-12)


def test_smoothness_examples():
    X = np.array([[1.0, 0.0], [4.0, 4.0]])
    assert smoothness(X[0], {0: 1.0}, X) == 0.0
    same = np.ones((3, 2))
    assert smoothness(same[0], {0: 1 / 3, 1: 1 / 3, 2: 1 / 3}, same) == pytest.approx(0.0, abs=1e-15)
    assert smoothness(X[0], {0: 0.0, 1: 1.0}, X) == pytest.approx(5.0)
    with pytest.raises(PreconditionError):
        smoothness(X[0], {1: -0.1}, X)


def test_bound_ho_examples():
    assert bound_ho([0.5, 0.5], BoundInputs((1, 3), (1.0, 1.0), 2.0)) == 0.0
    assert bound_ho([0.5, 0.5], BoundInputs((1, 3), (1.0, 0.0), 0.0)) == 0.0
    for n in (2, 3, 5):
        assert bound_ho([0.5, 0.5], BoundInputs((1, n), (1.0, 0.0), 1.0)) == pytest.approx(SQ2 * n / 2)
    with pytest.raises(ShapeError):
        bound_ho([1.0], BoundInputs((1, 2), (1.0, 0.0), 1.0))


def test_bound_nd_examples():
    b = BoundInputs((1, 2, 2), (0.0, 0.0, 0.0), 1.5, eta=2.0, gamma=1.0)
    assert bound_nd(phi(2, 2), b) == pytest.approx(SQ2 * 1.5)
    # eta/gamma grows without bound: the commonly quoted form goes to 0
    big = BoundInputs((1, 2, 2), (1.0, 0.5, 0.0), 1.0, eta=1e12, gamma=1.0)
    assert bound_nd(phi(2, 2), big, printed=True) < 1e-10
    # in the default orientation it is a vanishing eta that removes inconsistent attention
    small = BoundInputs((1, 2, 2), (1.0, 0.5, 0.0), 1.0, eta=1e-12, gamma=1.0)
    assert bound_nd(phi(2, 2), small) < 1e-10
    assert bound_nd(phi(2, 2), BoundInputs((1, 2, 2), (1.0, 1.0, 1.0), 1.0)) == 0.0


def test_bound_nd_plug_in():
    w = phi(2, 2)  # (3, 1, 1)
    sizes, cons = (1, 2, 2), (1.0, 0.5, 0.0)
    eta, gamma = 0.7, 1.3
    tot = 3 * 1 + 1 * 2 + 1 * 2
    good = 3 * 1 + 1 * 2 * 0.5
    R = tot / good
    printed = SQ2 / (1 + (1 / (R - 1)) * (eta / gamma))
    derived = SQ2 / (1 + (1 / (R - 1)) * (gamma / eta))
    b = BoundInputs(sizes, cons, 1.0, eta, gamma)
    assert bound_nd(w, b, printed=True) == pytest.approx(printed, rel=1e-12)
    assert bound_nd(w, b) == pytest.approx(derived, rel=1e-12)


def test_bound_nd_matches_labeled_tree():
    tree = relabel(generate_regular_tree(2, 2), [0, 0, 1, 0, 1])
    dist = hop_distances(tree, 0)
    sizes = tuple(int((dist == k).sum()) for k in range(3))
    cons = tuple(float(np.mean(tree.labels[dist == k] == 0)) for k in range(3))
    b = BoundInputs(sizes, cons, 1.0, 1.0, 1.0)
    w = [float(x) for x in phi(2, 2).phi]
    bad = sum(x * s * (1 - c) for x, s, c in zip(w, sizes, cons))
    good = sum(x * s * c for x, s, c in zip(w, sizes, cons))
    assert bound_nd(phi(2, 2), b) == pytest.approx(SQ2 * bad / (bad + good), rel=1e-12)


def test_bound_lgtl_examples():
    b = BoundInputs((1, 3, 3), (1.0, 1.0, 1.0), 1.0)
    assert bound_lgtl([0.2, 0.3, 0.5], b) == 0.0
    b = BoundInputs((1, 3, 3), (1.0, 0.0, 1.0), 1.0)
    assert bound_lgtl([0.5, 0.0, 0.5], b) == 0.0


def test_bound_lgtl_uniform_reduces_to_fixed_weights():
    sizes, cons = (1, 4, 4, 4), (1.0, 0.25, 0.5, 0.75)
    for eta, gamma in ((1.0, 1.0), (0.5, 2.0), (3.0, 1.5)):
        b = BoundInputs(sizes, cons, 1.3, eta, gamma)
        assert bound_lgtl([0.25] * 4, b) == pytest.approx(bound_nd([1.0] * 4, b), rel=1e-12)
        assert bound_lgtl([0.25] * 4, b, printed=True) == pytest.approx(bound_nd([1.0] * 4, b, printed=True),
                                                                        rel=1e-12)


def test_bound_inputs_validation():
    with pytest.raises(PreconditionError):
        BoundInputs((1,), (1.5,), 1.0)
    with pytest.raises(PreconditionError):
        BoundInputs((1,), (1.0,), 1.0, gamma=0.0)
    with pytest.raises(ShapeError):
        BoundInputs((1, 2), (1.0,), 1.0)


def test_eta_gamma_zero_projections():
    g = generate_sbm(SbmConfig(10, 2, 0.4, 0.4, 3, seed=0))
    zero = ProjectionWeights(np.zeros((3, 3)), np.zeros((3, 3)), np.eye(3))
    u = int(np.argmax(g.degrees()))
    assert estimate_eta_gamma(g, u, zero, 2) == (1.0, 1.0)


def test_eta_gamma_identical_features():
    g = generate_sbm(SbmConfig(10, 2, 0.4, 0.4, 3, seed=0))
    g = Graph.from_edges(g.num_nodes, g.edge_list(), np.ones((g.num_nodes, 3)), g.labels)
    eta, gamma = estimate_eta_gamma(g, 0, ProjectionWeights.random(3, 1, scale=1.0), 2)
    assert eta == pytest.approx(gamma, rel=1e-12)


def test_eta_gamma_brute_force():
    g = generate_sbm(SbmConfig(12, 2, 0.3, 0.2, 3, seed=4))
    w = ProjectionWeights.random(3, 5, scale=1.0)
    u = int(np.argmax(g.degrees()))
    dist = hop_distances(g, u, 2)
    same, diff = [], []
    for v in range(g.num_nodes):
        if dist[v] in (1, 2):
            s = math.exp(float(g.features[u] @ w.W_Q @ (g.features[v] @ w.W_K)) / math.sqrt(3))
            (same if g.labels[v] == g.labels[u] else diff).append(s)
    eta, gamma = estimate_eta_gamma(g, u, w, 2)
    assert eta == pytest.approx(np.mean(diff), rel=1e-12)
    assert gamma == pytest.approx(np.mean(same), rel=1e-12)


def test_lipschitz_examples():
    X = np.array([[0.0, 0.0], [1.0, 1.0]])
    g = Graph.from_edges(2, [(0, 1)], X, [0, 1])
    assert estimate_lipschitz(g) == pytest.approx(1.0)
    g3 = Graph.from_edges(2, [(0, 1)], 3 * X, [0, 1])
    assert estimate_lipschitz(g3) == pytest.approx(3.0)


def test_effective_attention_decomposition():
    n, L = 3, 3
    tree = generate_regular_tree(n, L, feature_dim=4, seed=1)
    w = ProjectionWeights.random(4, 2, scale=1.0)
    res = attend(ho_tokens(tree, 0, L), w)
    hat = effective_attention_ho(list(res.center), m_ho(n, L))
    dist = hop_distances(tree, 0)
    direct = sum(hat[dist[v]] * tree.features[v] for v in range(tree.num_nodes)) @ w.W_V
    assert_allclose(direct, res.output[0], rtol=1e-9)


def test_within_hop_indistinguishability():
    n, L = 3, 2
    tree = generate_regular_tree(n, L + 1, feature_dim=2, seed=3)
    w = ProjectionWeights.random(2, 4, scale=1.0)
    dist = hop_distances(tree, 0)
    leaves = np.flatnonzero(dist == 2)
    X = tree.features.copy()
    X[leaves] = X[leaves[::-1]]
    swapped = Graph.from_edges(tree.num_nodes, tree.edge_list(), X)
    a = attend(ho_tokens(tree, 0, 1), w).output[0]
    b = attend(ho_tokens(swapped, 0, 1), w).output[0]
    assert np.array_equal(a, b)


def noise_free(h, seed):
    return generate_sbm(SbmConfig(30, 2, 0.2 * h, 0.2 * (1 - h), 4, 2.0, 0.0, seed=seed))


@pytest.mark.parametrize("seed", range(4))
def test_ho_bound_with_hop_uniform_attention(seed):
    g = noise_free(0.8 if seed % 2 else 0.2, seed)
    lip = estimate_lipschitz(g)
    w = ProjectionWeights.random(4, seed, scale=1.0)
    for u in range(0, g.num_nodes, 3):
        if g.degree(u):
            c = ho_case(g, u, 3, w, lip)
            assert c.uniform_smoothness <= c.bound + 1e-9


@pytest.mark.parametrize("seed", range(4))
def test_nd_bound_with_realized_counts(seed):
    g = noise_free(0.8 if seed % 2 else 0.2, seed)
    lip = estimate_lipschitz(g)
    w = ProjectionWeights.random(4, seed, scale=1.0)
    for u in range(0, g.num_nodes, 3):
        if g.degree(u):
            assert nd_case(g, u, (2, 2, 2), seed, w, lip).holds


def test_lgtl_case_fields():
    g = noise_free(0.5, 1)
    p = LgtlParams.init(4, 2, (3, 3), 2, seed=0)
    c = lgtl_case(g, 0, p, 0, estimate_lipschitz(g))
    assert c.template == "lgtl"
    assert c.smoothness >= 0 and c.bound >= 0
