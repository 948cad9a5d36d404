import numpy as np
import pytest

from conetree.operators import (OperatorParams, build_adjacency, build_custom,
                                build_laplacian_dirichlet, build_normalized_laplacian,
                                classify_regular, load_operator, moderate_growth_indicator,
                                realize_on_tree)
from conetree.tree import SubstitutionMatrix, ValidationError, build_truncated_tree


def test_adjacency_coefficients(m_example, m_three_bands, m_binary):
    p = build_adjacency(m_example)
    np.testing.assert_array_equal(p.offdiag, [[2, 1], [1, 1]])
    np.testing.assert_array_equal(p.diag, [0, 0])
    np.testing.assert_array_equal(build_adjacency(m_three_bands).offdiag, [[1, 42], [1, 1]])
    p = build_adjacency(m_binary)
    np.testing.assert_array_equal(p.offdiag, [[2]])
    np.testing.assert_array_equal(p.diag, [0])


def test_dirichlet_laplacian_diagonal(m_example, m_binary):
    np.testing.assert_array_equal(build_laplacian_dirichlet(m_example).diag, [4, 3])
    np.testing.assert_array_equal(build_laplacian_dirichlet(m_binary).diag, [3])


def test_normalized_laplacian(m_example):
    p = build_normalized_laplacian(m_example)
    np.testing.assert_allclose(p.offdiag, [[2 / 16, 1 / 16], [1 / 9, 1 / 9]], rtol=1e-15)
    np.testing.assert_array_equal(p.diag, [1, 1])


def test_builders_reject_axiom_violation():
    with pytest.raises(ValidationError):
        build_adjacency(SubstitutionMatrix.from_array([[1]]))


@pytest.mark.parametrize("builder", [build_adjacency, build_laplacian_dirichlet,
                                     build_normalized_laplacian])
def test_zero_pattern_equivalence(builder):
    m = SubstitutionMatrix.from_array([[1, 3, 0], [0, 2, 1], [1, 0, 1]])
    p = builder(m)
    np.testing.assert_array_equal(p.offdiag > 0, m.entries > 0)


def test_custom_pattern_mismatch(m_example):
    with pytest.raises(ValidationError):
        build_custom(m_example, [[1, 0], [1, 1]], [0, 0])
    with pytest.raises(ValidationError):
        OperatorParams([[1, -1], [1, 1]], [0, 0])


def test_load_operator_forms(m_example, tmp_path):
    assert load_operator("adjacency", m_example).kind == "adjacency"
    custom = {"kind": "custom", "offdiag": [[1, 1], [1, 1]], "diag": [0.5, 0.5]}
    p = load_operator(custom, m_example)
    np.testing.assert_array_equal(p.diag, [0.5, 0.5])
    with pytest.raises(ValidationError):
        load_operator({"kind": "mystery"}, m_example)


def test_classify_regular(m_example, m_binary):
    info = classify_regular(OperatorParams([[1, 1], [1, 1]], [0, 0]))
    assert info.regular and info.k == 2 and info.w == 0
    assert not classify_regular(build_adjacency(m_example)).regular
    info = classify_regular(build_adjacency(m_binary))
    assert info.regular and info.k == 2


def test_realize_edge_weights(m_binary, m_example):
    tree = build_truncated_tree(m_binary, "1", 3)
    vo = realize_on_tree(build_adjacency(m_binary), tree)
    assert np.all(vo.t[1:] == 1) and vo.t[0] == 0

    # regular operator on a non-regular graph: |t|^2 = 1/2 on 1-1 edges
    p = build_custom(m_example, [[1, 1], [1, 1]], [0.25, -0.5])
    tree = build_truncated_tree(m_example, "1", 2)
    vo = realize_on_tree(p, tree)
    child = np.flatnonzero(tree.parent >= 0)
    same = (tree.labels[child] == 0) & (tree.labels[tree.parent[child]] == 0)
    np.testing.assert_allclose(vo.t[child[same]], 1 / np.sqrt(2))
    np.testing.assert_array_equal(vo.w[tree.labels == 0], 0.25)


def test_moderate_growth_indicator():
    const = moderate_growth_indicator(np.ones(50))
    assert np.all(np.diff(const) > 0) and const[-1] > 40
    geometric = moderate_growth_indicator(2.0 ** np.arange(50))
    assert geometric.max() < 2
    n = np.arange(1, 2001, dtype=float)
    s = moderate_growth_indicator(n ** 0.25)
    # growth like n^(1 - 2 beta) = n^0.5
    ratio = s[1999 - 1] / s[499 - 1]
    assert 1.6 < ratio < 2.4
