import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from horizon_gnn import kernels
from horizon_gnn._accel import HAS_NUMBA
from horizon_gnn.errors import DataError
from horizon_gnn.graph import (build_mesh_graph, connected_components, decode_mesh,
                               encode_mesh, load_mesh, save_mesh, spmm)

from conftest import dense_normalized_adjacency, random_graph


def test_two_node_graph():
    g = build_mesh_graph(2, [(0, 1)], [(0, 0), (1, 0)])
    np.testing.assert_allclose(g.dense_norm_adjacency(), [[0.5, 0.5], [0.5, 0.5]], atol=1e-15)


def test_isolated_node():
    g = build_mesh_graph(1, [], [(0, 0)])
    assert g.dense_norm_adjacency().tolist() == [[1.0]]


def test_path_middle_row():
    g = build_mesh_graph(3, [(0, 1), (1, 2)])
    row = g.dense_norm_adjacency()[1]
    np.testing.assert_allclose(row, [1 / np.sqrt(6), 1 / 3, 1 / np.sqrt(6)], rtol=1e-15)


def test_duplicates_and_reversed_edges_collapse():
    g = build_mesh_graph(3, [(0, 1), (1, 0), (0, 1), (2, 1)])
    assert g.edges.tolist() == [[0, 1], [1, 2]]
    assert g.degree.tolist() == [1, 2, 1]


@pytest.mark.parametrize("n, edges", [(0, []), (3, [(0, 3)]), (3, [(1, 1)]), (2, [(-1, 0)])])
def test_rejects_malformed(n, edges):
    with pytest.raises(DataError):
        build_mesh_graph(n, edges)


def test_csr_columns_sorted_and_diagonal_positive(rng):
    g = random_graph(rng, 30)
    for i in range(g.node_count):
        cols = g.indices[g.indptr[i]:g.indptr[i + 1]]
        assert np.all(np.diff(cols) > 0)
        assert i in cols
    dense = g.dense_norm_adjacency()
    assert np.all(np.diag(dense) > 0)
    np.testing.assert_allclose(dense, dense.T, atol=1e-12)


def test_entries_match_degree_formula(rng):
    g = random_graph(rng, 25)
    for i in range(g.node_count):
        for k in range(g.indptr[i], g.indptr[i + 1]):
            j = g.indices[k]
            expect = 1 / np.sqrt((g.degree[i] + 1) * (g.degree[j] + 1))
            assert g.data[k] == pytest.approx(expect, rel=1e-15)


def test_spmm_examples():
    g = build_mesh_graph(2, [(0, 1)])
    np.testing.assert_allclose(spmm(g, [[2, 0], [0, 4]]), [[1, 2], [1, 2]], atol=1e-15)
    assert spmm(build_mesh_graph(1, []), [[7.0]]).tolist() == [[7.0]]
    assert not np.any(spmm(g, np.zeros((2, 5))))


def test_spmm_dimension_mismatch():
    g = build_mesh_graph(3, [(0, 1)])
    with pytest.raises(ValueError):
        spmm(g, np.zeros((2, 4)))


def test_spmm_identity_reproduces_dense_oracle(rng):
    for _ in range(20):
        n = int(rng.integers(1, 51))
        g = random_graph(rng, n, p=rng.uniform(0.02, 0.4))
        oracle = dense_normalized_adjacency(n, g.edges)
        np.testing.assert_allclose(spmm(g, np.eye(n)), oracle, atol=1e-12, rtol=0)


def test_row_sums(rng):
    g = random_graph(rng, 40)
    assert np.all(g.dense_norm_adjacency().sum(axis=1) > 0)
    ring = build_mesh_graph(6, [(i, (i + 1) % 6) for i in range(6)])
    np.testing.assert_allclose(ring.dense_norm_adjacency().sum(axis=1), 1.0, rtol=1e-15)
    two = build_mesh_graph(2, [(0, 1)])
    np.testing.assert_allclose(two.dense_norm_adjacency().sum(axis=1), 1.0, rtol=1e-15)


def test_row_sums_can_exceed_one_off_regular_graphs():
    # hub of a 4-leaf star: 1/5 + 4/sqrt(10) > 1
    star = build_mesh_graph(5, [(0, k) for k in range(1, 5)])
    sums = star.dense_norm_adjacency().sum(axis=1)
    assert sums[0] == pytest.approx(0.2 + 4 / np.sqrt(10))
    assert sums[0] > 1 and np.all(sums[1:] < 1)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-5, 5), st.floats(-5, 5))
def test_spmm_linear(seed, a, b):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, int(rng.integers(1, 20)))
    x = rng.standard_normal((g.node_count, 3))
    y = rng.standard_normal((g.node_count, 3))
    np.testing.assert_allclose(spmm(g, a * x + b * y), a * spmm(g, x) + b * spmm(g, y), atol=1e-10)


def test_spmm_batched_matches_per_sample(rng):
    g = random_graph(rng, 20)
    x = rng.standard_normal((20, 4, 6))
    out = spmm(g, x)
    for b in range(4):
        assert np.array_equal(out[:, b, :], spmm(g, x[:, b, :]))


def test_spmm_deterministic(rng):
    g = random_graph(rng, 30)
    x = rng.standard_normal((30, 16))
    assert spmm(g, x).tobytes() == spmm(g, x).tobytes()


@pytest.mark.skipif(not HAS_NUMBA, reason="numba path disabled")
def test_numba_and_numpy_kernels_agree(rng):
    g = random_graph(rng, 45)
    x = rng.standard_normal((45, 33))
    a = kernels.csr_spmm_numba(g.indptr, g.indices, g.data, x)
    b = kernels.csr_spmm_numpy(g.indptr, g.indices, g.data, x)
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-14)


def test_mesh_file_roundtrip(tmp_path, rng):
    g = random_graph(rng, 17)
    path = tmp_path / "m.bin"
    save_mesh(g, path)
    h = load_mesh(path)
    assert h.node_count == 17
    assert np.array_equal(h.edges, g.edges)
    assert np.array_equal(h.node_positions, g.node_positions)
    assert np.array_equal(h.data, g.data)
    assert h.content_hash() == g.content_hash()


def test_mesh_file_layout():
    g = build_mesh_graph(2, [(1, 0)], [(1.5, -2.0), (0.0, 3.0)])
    buf = encode_mesh(g)
    assert buf[:8] == b"HGNNMESH"
    assert int.from_bytes(buf[8:12], "little") == 1
    assert int.from_bytes(buf[16:24], "little") == 2
    assert int.from_bytes(buf[24:32], "little") == 1
    assert np.frombuffer(buf[32:40], "<u4").tolist() == [0, 1]
    assert np.frombuffer(buf[40:], "<f8").tolist() == [1.5, -2.0, 0.0, 3.0]
    assert len(buf) == 16 + 16 + 8 + 32


def test_mesh_file_rejects_garbage():
    with pytest.raises(DataError):
        decode_mesh(b"NOTAMESH" + bytes(24))
    buf = encode_mesh(build_mesh_graph(2, [(0, 1)]))
    with pytest.raises(DataError):
        decode_mesh(buf[:-1])


def test_connected_components():
    g = build_mesh_graph(5, [(0, 1), (3, 4)])
    assert connected_components(g).tolist() == [0, 0, 2, 3, 3]
