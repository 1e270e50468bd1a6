from collections import Counter
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from lgtl.errors import DegenerateStructureError, PreconditionError
from lgtl.graph import Graph, SbmConfig, generate_regular_tree, generate_sbm, hop_distances
from lgtl.hopmatrix import m_ho, m_nd
from lgtl.templates import ho_token_stack, ho_tokens, nd_index_stack, nd_tokens, nd_tree, none_tokens


def path3(d=2, seed=0):
    return Graph.from_edges(3, [(0, 1), (1, 2)], np.random.default_rng(seed).standard_normal((3, d)))


def test_none_tokens():
    g = path3()
    tl = none_tokens(g, 2)
    assert len(tl) == 1
    assert tl.provenance == (((2, 1),),)
    assert_array_equal(tl.tokens[0], g.features[2])


def test_ho_base_case():
    g = path3()
    tl = ho_tokens(g, 1, 0)
    assert len(tl) == 1
    assert_array_equal(tl.tokens[0], g.features[1])


def test_ho_one_step_on_path():
    g = path3()
    tl = ho_tokens(g, 1, 1)
    assert_allclose(tl.tokens[1], (g.features[0] + g.features[2]) / 2, rtol=1e-12)


def test_ho_tree_weight_matches_closed_form():
    for n in (2, 3, 4):
        tree = generate_regular_tree(n, 3)
        tl = ho_tokens(tree, 0, 3)
        one_hop = {int(v) for v in tree.neighbors(0)}
        for v, w in tl.provenance[3]:
            if v in one_hop:
                assert w == Fraction(2 * n - 1, n ** 3)


def test_ho_isolated_node_raises():
    g = Graph.from_edges(3, [(0, 1)], np.zeros((3, 1)))
    with pytest.raises(DegenerateStructureError):
        ho_tokens(g, 2, 1)


def test_ho_mass_and_rebuild():
    g = generate_sbm(SbmConfig(10, 2, 0.4, 0.2, 3, seed=2))
    u = int(np.argmax(g.degrees()))
    tl = ho_tokens(g, u, 4)
    for t in range(len(tl)):
        assert tl.mass(t) == 1
    assert_allclose(tl.rebuild(g.features), tl.tokens, rtol=1e-12)


def test_ho_tree_agrees_with_table():
    for n in (2, 3):
        L = 4
        tree = generate_regular_tree(n, 2 * L + 1)
        dist = hop_distances(tree, 0)
        table = m_ho(n, L)
        tl = ho_tokens(tree, 0, L)
        for k, prov in enumerate(tl.provenance):
            for v, w in prov:
                assert w == table[k][dist[v]]


def test_ho_stack_matches_single():
    g = generate_sbm(SbmConfig(15, 2, 0.3, 0.1, 3, seed=5))
    stack = ho_token_stack(g, 3)
    for u in range(g.num_nodes):
        if g.degree(u):
            assert_allclose(stack[u], ho_tokens(g, u, 3).tokens, rtol=1e-10, atol=1e-12)


def test_nd_single_sample_on_path():
    tl, tree = nd_tokens(path3(), 1, (1,), seed=0)
    assert len(tree.layers[1]) == 1
    assert tree.layers[1][0] in (0, 2)
    assert len(tl) == 2


def test_nd_layer_sizes():
    tree = nd_tree(generate_regular_tree(3, 3), 0, (2, 2), seed=1)
    assert [len(layer) for layer in tree.layers] == [1, 2, 4]


def test_nd_padding_with_parent():
    g = Graph.from_edges(2, [(0, 1)], np.zeros((2, 1)))
    tree = nd_tree(g, 0, (3,), seed=0)
    assert tree.layers[1] == (1, 0, 0)


def test_nd_parent_links():
    g = generate_sbm(SbmConfig(20, 2, 0.3, 0.1, 2, seed=1))
    tree = nd_tree(g, 4, (3, 2), seed=9)
    for k in (1, 2):
        for slot, v in enumerate(tree.layers[k]):
            parent = tree.layers[k - 1][tree.parent_slot(k, slot)]
            assert v == parent or v in set(g.neighbors(parent).tolist())


def test_nd_without_replacement():
    g = generate_regular_tree(5, 2)
    tree = nd_tree(g, 0, (5,), seed=3)
    assert sorted(tree.layers[1]) == sorted(g.neighbors(0).tolist())


def test_nd_deterministic():
    g = generate_sbm(SbmConfig(20, 2, 0.3, 0.1, 2, seed=1))
    assert nd_tree(g, 3, (3, 3), 11) == nd_tree(g, 3, (3, 3), 11)
    others = {nd_tree(g, 3, (3, 3), s).layers for s in range(10)}
    assert len(others) > 1


def test_nd_bad_sizes():
    with pytest.raises(PreconditionError):
        nd_tree(path3(), 0, (2, 0), 0)


def test_nd_occurrence_counts_match_table():
    for n in (2, 3):
        for K in range(1, 5):
            tree = generate_regular_tree(n, K)
            dist = hop_distances(tree, 0)
            _, nd = nd_tokens(tree, 0, [n] * K, seed=K)
            table = m_nd(n, K)
            for i, layer in enumerate(nd.layers):
                for v, c in Counter(layer).items():
                    assert c == table[i][dist[v]]


def test_nd_index_stack():
    g = generate_sbm(SbmConfig(10, 2, 0.3, 0.1, 2, seed=1))
    stack = nd_index_stack(g, (2, 2), 4)
    assert stack.shape == (20, 7)
    assert list(stack[6]) == list(sum(nd_tree(g, 6, (2, 2), 4).layers, ()))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), L=st.integers(0, 4))
def test_ho_provenance_invariants(seed, L):
    g = generate_sbm(SbmConfig(8, 2, 0.6, 0.3, 3, seed=seed))
    for u in range(g.num_nodes):
        if g.degree(u) == 0:
            continue
        try:
            tl = ho_tokens(g, u, L)
        except DegenerateStructureError:
            continue
        assert all(tl.mass(t) == 1 for t in range(len(tl)))
        assert_allclose(tl.rebuild(g.features), tl.tokens, rtol=1e-12, atol=1e-14)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), sizes=st.lists(st.integers(1, 3), min_size=1, max_size=3))
def test_nd_shape_invariants(seed, sizes):
    g = generate_sbm(SbmConfig(8, 2, 0.5, 0.2, 2, seed=seed))
    tl, tree = nd_tokens(g, seed % g.num_nodes, sizes, seed)
    expected = np.cumprod([1] + sizes)
    assert [len(layer) for layer in tree.layers] == list(expected)
    assert len(tl) == expected.sum()
    assert all(tl.mass(t) == 1 for t in range(len(tl)))
