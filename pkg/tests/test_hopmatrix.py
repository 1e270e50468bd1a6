from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from lgtl.errors import PreconditionError
from lgtl.graph import generate_regular_tree
from lgtl.hopmatrix import (check_phi, check_properties, effective_attention_ho, effective_attention_nd, m_ho, m_nd,
                            oracle_ho_coefficients, phi, ratio_closed_form, regular_tree_hop_sizes)

F = Fraction


def test_ho_base_values():
    for n in range(2, 7):
        t = m_ho(n, 3)
        assert t[0][0] == 1
        assert t[1][1] == F(1, n)
        assert t[3][1] == F(2 * n - 1, n ** 3)


def test_ho_entries_are_exact():
    t = m_ho(3, 6)
    assert all(isinstance(x, Fraction) for row in t.entries for x in row)


def test_nd_base_values():
    t = m_nd(2, 3)
    assert t[1][1] == 1
    assert t[1][0] == 0
    assert t[2][0] == 2
    assert t[2][2] == 1


def test_ratio_closed_form():
    for n in range(2, 7):
        t = m_ho(n, 8)
        for k in range(2, 9):
            assert ratio_closed_form(t, k) == (k - 1) * n - (k - 2)


def test_oracle_matches_recursion():
    for n in (2, 3, 5):
        for K in range(7):
            tree = generate_regular_tree(n, max(K, 1))
            assert oracle_ho_coefficients(tree, 0, K) == [list(r) for r in m_ho(n, K).entries]


def test_oracle_small_cases():
    tree = generate_regular_tree(3, 1)
    c = oracle_ho_coefficients(tree, 0, 1)
    assert c[0][0] == 1
    assert c[1][1] == F(1, 3)
    assert oracle_ho_coefficients(generate_regular_tree(2, 3), 0, 3)[3][1] == F(3, 8)


def test_oracle_rejects_non_tree():
    from lgtl.graph import Graph
    import numpy as np

    cycle = Graph.from_edges(4, [(0, 1), (1, 2), (2, 3), (3, 0)], np.zeros((4, 1)))
    with pytest.raises(PreconditionError):
        oracle_ho_coefficients(cycle, 0, 2)


def test_ho_parity_and_row_decay_hold():
    for n in range(2, 7):
        rep = check_properties(m_ho(n, 10))
        assert rep.parity and rep.row_decay


def test_ho_column_decay_fails_on_the_diagonal():
    # M[k][k] = n^-k while M[k+2][k] = ((k+1)n - k) / n^(k+2), equal at k = n
    for n in range(3, 7):
        rep = check_properties(m_ho(n, 10))
        assert not rep.column_monotonicity
        assert rep.counterexample == ("column_monotonicity", n, n)
        t = m_ho(n, n + 2)
        assert t[n][n] == t[n + 2][n]


def test_ho_column_decay_holds_below_diagonal_for_large_n():
    for n in range(4, 7):
        t = m_ho(n, 10)
        for k in range(9):
            for i in range(k % 2, k - 1, 2):
                assert t[k][i] > t[k + 2][i]


def test_nd_properties_hold():
    for n in range(2, 7):
        assert check_properties(m_nd(n, 10)).ok


def test_phi_examples():
    assert phi(4, 1).phi == (1, 1)
    assert phi(3, 3).phi == (4, 6, 1, 1)
    assert phi(2, 2)[2] == 1


def test_phi_properties():
    for n in range(2, 7):
        for L in range(11):
            assert check_phi(n, L).ok


def test_phi_odd_identity():
    for n in range(2, 6):
        for L in (1, 3, 5, 7):
            w = phi(n, L)
            for t in range((L - 1) // 2):
                assert w[2 * t + 1] == w[2 * t] + (n - 1) * w[2 * t + 2]


def test_effective_attention_examples():
    t = m_ho(3, 2)
    assert effective_attention_ho([1, 0, 0], t) == [1, 0, 0]
    assert effective_attention_ho([F(0), F(1), F(0)], t) == [0, F(1, 3), 0]
    t2 = m_ho(2, 2)
    hat = effective_attention_ho([F(0), F(0), F(1)], t2)
    assert hat == [F(1, 2), 0, F(1, 4)]
    assert sum(s * a for s, a in zip(regular_tree_hop_sizes(2, 2), hat)) == 1


def test_effective_attention_rejects_unnormalized():
    with pytest.raises(PreconditionError):
        effective_attention_ho([0.5, 0.4], m_ho(2, 2))
    with pytest.raises(PreconditionError):
        effective_attention_ho([0.2] * 5, m_ho(2, 2))


def test_effective_attention_nd():
    assert effective_attention_nd({0: 0.5}, {0: 0}, phi(2, 1)) == {0: 0.5}
    assert effective_attention_nd({0: 0.5}, {0: 0}, phi(2, 2)) == {0: 1.5}
    assert effective_attention_nd({7: 0.25}, {7: 2}, phi(2, 2))[7] == 0.25
    assert effective_attention_nd({1: 0.2, 2: 0.3}, {1: 1, 2: 1}, phi(5, 1)) == {1: 0.2, 2: 0.3}
    with pytest.raises(PreconditionError):
        effective_attention_nd({3: 0.1}, {}, phi(2, 2))


alphas = st.lists(st.integers(0, 20), min_size=1, max_size=8).filter(lambda a: sum(a) > 0)


@settings(max_examples=80, deadline=None)
@given(n=st.integers(2, 6), raw=alphas)
def test_mass_conservation(n, raw):
    alpha = [F(a, sum(raw)) for a in raw]
    L = len(alpha) - 1
    hat = effective_attention_ho(alpha, m_ho(n, L))
    assert sum(s * a for s, a in zip(regular_tree_hop_sizes(n, L), hat)) == 1


@settings(max_examples=80, deadline=None)
@given(n=st.integers(2, 6), raw=alphas)
def test_near_hop_dominance(n, raw):
    alpha = [F(a, sum(raw)) for a in raw]
    L = len(alpha) - 1
    hat = effective_attention_ho(alpha, m_ho(n, L))
    for k1 in range(L + 1):
        for k2 in range(k1 + 2, L + 1, 2):
            if any(alpha[i] > 0 for i in range(k2, L + 1)):
                assert hat[k1] > hat[k2]


@settings(max_examples=50, deadline=None)
@given(n=st.integers(2, 8), K=st.integers(0, 12))
def test_table_parity_support(n, K):
    for table in (m_ho(n, K), m_nd(n, K)):
        for k in range(K + 1):
            for i in range(K + 1):
                assert (table[k][i] != 0) == (i <= k and (k - i) % 2 == 0)
