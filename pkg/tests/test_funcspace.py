import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from funcal import basis1d as b1
from funcal import funcspace as fs


@pytest.fixture(scope="module")
def basis21():
    return b1.build_basis("trig_nodal", 20)


def test_shat_cardinality_values():
    assert fs.shat_cardinality(10, 2) == 66
    assert fs.shat_cardinality(10, 10) == 184756
    for m in (1, 5, 40):
        assert fs.shat_cardinality(m, 0) == 1


def test_shat_cardinality_large_arguments_exact():
    # arbitrary-width integers: no silent overflow
    val = fs.shat_cardinality(64, 12)
    assert val == sum(__import__("math").comb(j + 63, j) for j in range(13))
    assert val > 2 ** 40


def test_shat_nodes_counts(basis21):
    B11 = b1.build_basis("trig_nodal", 10)
    assert len(fs.shat_nodes(B11, 1)) == 12
    assert len(fs.shat_nodes(basis21, 2)) == 253


def test_shat_nodes_q0_is_zero_function(basis21):
    ns = fs.shat_nodes(basis21, 0)
    assert len(ns) == 1
    assert np.abs(ns.nodes[0].a).max() == 0.0


def test_shat_nodes_ordering():
    B = b1.build_basis("fourier_modal", 4)
    A = fs.shat_nodes(B, 2).coefficient_array()
    assert np.abs(A[0]).max() == 0.0
    for i in range(4):
        assert np.array_equal(A[1 + i], np.eye(4)[i])
    # first pair node doubles the first direction
    assert np.array_equal(A[5], [2, 0, 0, 0])
    assert np.array_equal(A[6], [1, 1, 0, 0])


def test_shat_nodes_q_above_m_rejected():
    B = b1.build_basis("fourier_modal", 3)
    with pytest.raises(ValueError):
        fs.shat_nodes(B, 4)


def test_shat_counts_and_embedding_m_up_to_12():
    for m in range(1, 13):
        B = b1.build_basis("fourier_modal", m)
        prev = None
        for q in range(0, min(4, m) + 1):
            ns = fs.shat_nodes(B, q)
            assert len(ns) == fs.shat_cardinality(m, q)
            cur = {tuple(nd.a) for nd in ns}
            if prev is not None:
                assert prev <= cur
            prev = cur


def test_sparse_nodes_table_counts():
    for m, expected in ((2, 121), (8, 1117)):
        B = b1.build_basis("trig_nodal", m)
        ns = fs.sparse_nodes(B, 2, 5, "gauss_hermite")
        assert len(ns) == expected


def test_sparse_nodes_level1_degenerates_to_zero():
    B = b1.build_basis("trig_nodal", 4)
    ns = fs.sparse_nodes(B, 2, 1)
    assert len(ns) == 1
    assert np.abs(ns.nodes[0].a).max() == 0.0


def test_sparse_nodes_exponential_growth_differs():
    B = b1.build_basis("trig_nodal", 2)
    lin = fs.sparse_nodes(B, 2, 3, growth="linear")
    exp = fs.sparse_nodes(B, 2, 3, growth="exponential")
    assert len(exp) > len(lin)


def test_sparse_nodes_clenshaw_curtis_runs():
    B = b1.build_basis("fourier_modal", 3)
    ns = fs.sparse_nodes(B, 2, 3, "clenshaw_curtis")
    A = ns.coefficient_array()
    assert np.abs(A).max() <= 1.0 + 1e-12
    assert len({tuple(np.round(r, 12)) for r in A}) == len(ns)


def test_sparse_nodes_bad_rule_rejected():
    B = b1.build_basis("fourier_modal", 3)
    with pytest.raises(ValueError):
        fs.sparse_nodes(B, 2, 3, "gauss_patterson")


def test_gaussian_ensemble_mean_bound():
    B = b1.build_basis("fourier_modal", 51)
    ens = fs.gaussian_ensemble(B, 50, 1.0, 20000, 7)
    A = ens.coefficient_array()
    assert np.abs(A.mean(axis=0)).max() < 0.02
    assert np.abs(A[:, 51:]).max() == 0.0 if A.shape[1] > 51 else True


def test_gaussian_ensemble_deterministic_per_seed():
    B = b1.build_basis("fourier_modal", 6)
    a1 = fs.gaussian_ensemble(B, 4, 0.5, 64, 11).coefficient_array()
    a2 = fs.gaussian_ensemble(B, 4, 0.5, 64, 11).coefficient_array()
    a3 = fs.gaussian_ensemble(B, 4, 0.5, 64, 12).coefficient_array()
    assert np.array_equal(a1, a2)
    assert not np.array_equal(a1, a3)


def test_gaussian_ensemble_sigma_zero():
    B = b1.build_basis("fourier_modal", 6)
    ens = fs.gaussian_ensemble(B, 4, 0.0, 5, 3)
    assert np.abs(ens.coefficient_array()).max() == 0.0


def test_gaussian_ensemble_q_bound():
    B = b1.build_basis("fourier_modal", 4)
    with pytest.raises(ValueError):
        fs.gaussian_ensemble(B, 4, 1.0, 3, 0)


def test_gaussian_ensemble_metadata_names_rng():
    B = b1.build_basis("fourier_modal", 6)
    ens = fs.gaussian_ensemble(B, 2, 1.0, 3, 5)
    assert "PCG64" in ens.parameters["rng"]
    assert np.__version__ in ens.parameters["rng"]


def test_node_vectors_have_basis_length():
    B = b1.build_basis("trig_nodal", 6)
    for ns in (fs.shat_nodes(B, 2), fs.sparse_nodes(B, 2, 3),
               fs.gaussian_ensemble(B, 3, 1.0, 10, 0)):
        for nd in ns:
            assert nd.a.shape == (B.m,)


def test_nodeset_requires_shared_basis():
    B1 = b1.build_basis("fourier_modal", 3)
    B2 = b1.build_basis("fourier_modal", 3)
    n1 = fs.TestFunction(B1, [1.0, 0.0, 0.0])
    n2 = fs.TestFunction(B2, [0.0, 1.0, 0.0])
    with pytest.raises(ValueError):
        fs.NodeSet([n1, n2], "custom")


def test_testfunction_evaluate_and_inner():
    B = b1.build_basis("fourier_modal", 5)
    f = fs.TestFunction(B, [0.0, 1.0, 0.0, 0.0, 0.0])
    x = np.array([0.3, 1.1])
    assert np.abs(f.evaluate(x) - np.sin(x) / np.sqrt(np.pi)).max() < 1e-12
    g = fs.TestFunction(B, [2.0, 0.5, 0.0, 0.0, 0.0])
    assert abs(fs.inner_product(f, g) - 0.5) < 1e-12


def test_inner_product_across_bases():
    Bf = b1.build_basis("fourier_modal", 5)
    Bn = b1.build_basis("trig_nodal", 8)
    f = fs.TestFunction(Bf, [0, 1, 0, 0, 0])
    g = fs.TestFunction(Bn, b1.project(lambda x: np.sin(x) / np.sqrt(np.pi), Bn))
    assert abs(fs.inner_product(f, g) - 1.0) < 1e-10


def test_coeffs_in_other_basis():
    Bf = b1.build_basis("fourier_modal", 5)
    Bn = b1.build_basis("trig_nodal", 8)
    f = fs.TestFunction(Bf, [0.3, 1.0, -0.4, 0.0, 0.2])
    c = f.coeffs_in(Bn)
    g = fs.TestFunction(Bn, c)
    x = np.linspace(0, 2 * np.pi, 17)
    assert np.abs(f.evaluate(x) - g.evaluate(x)).max() < 1e-10


def test_csv_round_trip(tmp_path):
    B = b1.build_basis("fourier_modal", 3)
    ns = fs.shat_nodes(B, 1)
    path = tmp_path / "nodes.csv"
    ns.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("#")
    assert "fourier_modal" in lines[1]
    data = np.loadtxt(path, delimiter=",", skiprows=2)
    assert np.allclose(data, ns.coefficient_array())


@given(st.integers(min_value=1, max_value=12), st.integers(min_value=0, max_value=4))
@settings(max_examples=30, deadline=None)
def test_shat_cardinality_matches_closed_form(m, q):
    # sum of multiset counts equals binom(q+m, q)
    import math
    assert fs.shat_cardinality(m, q) == math.comb(q + m, q)
