"""Mesh graphs and the symmetric-normalized propagation operator."""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import DataError

MESH_MAGIC = b"HGNNMESH"
MESH_VERSION = 1


@dataclass(frozen=True, eq=False)
class MeshGraph:
    """Undirected mesh graph with ``D^-1/2 (A + I) D^-1/2`` stored as CSR.

    ``edges`` holds each undirected edge once as ``(i, j)`` with ``i < j``,
    sorted lexicographically. ``indptr``/``indices``/``data`` are the CSR
    arrays of the normalized adjacency with ascending column order per row.
    """

    node_count: int
    edges: np.ndarray
    node_positions: np.ndarray
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    degree: np.ndarray = field(repr=False)

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    @property
    def norm_adjacency(self):
        return self.indptr, self.indices, self.data

    def dense_norm_adjacency(self) -> np.ndarray:
        return kernels.csr_to_dense(self.indptr, self.indices, self.data, self.node_count)

    def neighbors(self, i: int) -> np.ndarray:
        cols = self.indices[self.indptr[i]:self.indptr[i + 1]]
        return cols[cols != i]

    def content_hash(self) -> bytes:
        """SHA-256 of the canonical mesh file encoding."""
        return hashlib.sha256(encode_mesh(self)).digest()


def build_mesh_graph(node_count, edges, positions=None) -> MeshGraph:
    node_count = int(node_count)
    if node_count <= 0:
        raise DataError("node_count must be positive")
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if e.size and (e.min() < 0 or e.max() >= node_count):
        raise DataError(f"edge index out of range for node_count={node_count}")
    if np.any(e[:, 0] == e[:, 1]):
        bad = e[e[:, 0] == e[:, 1]][0]
        raise DataError(f"self-loop in input edges at node {bad[0]}")

    if positions is None:
        pos = np.zeros((node_count, 2))
    else:
        pos = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
        if len(pos) != node_count:
            raise DataError("positions must have one row per node")

    lo = np.minimum(e[:, 0], e[:, 1])
    hi = np.maximum(e[:, 0], e[:, 1])
    und = np.unique(np.stack([lo, hi], axis=1), axis=0) if len(e) else np.zeros((0, 2), np.int64)

    degree = np.zeros(node_count, dtype=np.int64)
    np.add.at(degree, und[:, 0], 1)
    np.add.at(degree, und[:, 1], 1)

    # both directions plus self-loops, sorted by (row, col)
    loops = np.arange(node_count, dtype=np.int64)
    rows = np.concatenate([und[:, 0], und[:, 1], loops])
    cols = np.concatenate([und[:, 1], und[:, 0], loops])
    order = np.lexsort((cols, rows))
    rows, cols = rows[order], cols[order]

    inv_sqrt = 1.0 / np.sqrt(degree + 1.0)
    data = inv_sqrt[rows] * inv_sqrt[cols]
    indptr = np.zeros(node_count + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=node_count), out=indptr[1:])

    for arr in (und, pos, indptr, cols, data, degree):
        arr.setflags(write=False)
    return MeshGraph(node_count, und, pos, indptr, cols, data, degree)


def spmm(graph: MeshGraph, features) -> np.ndarray:
    """Normalized adjacency times ``features`` of shape (N, ...).

    Trailing axes are flattened into columns, so node-major batches
    (N, B, D) propagate in one pass.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim < 2 or x.shape[0] != graph.node_count:
        raise ValueError(
            f"features must have {graph.node_count} rows, got shape {np.shape(features)}"
        )
    out = kernels.csr_spmm(graph.indptr, graph.indices, graph.data, x.reshape(x.shape[0], -1))
    return out.reshape(x.shape)


def connected_components(graph: MeshGraph) -> np.ndarray:
    """Component label per node (labels are the smallest node index in each component)."""
    parent = np.arange(graph.node_count)

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i, j in graph.edges:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    return np.array([find(i) for i in range(graph.node_count)])


# -- file format -----------------------------------------------------------
#
#   offset  size        field
#   0       8           magic b"HGNNMESH"
#   8       4           u32 version (1)
#   12      4           u32 reserved (0)
#   16      8           u64 node_count
#   24      8           u64 edge_count (E)
#   32      8*E         E pairs of u32 (i, j), i < j, lexicographically sorted
#   ...     16*N        N pairs of f64 (x_km, y_km)
#
# little-endian throughout.


def encode_mesh(graph: MeshGraph) -> bytes:
    header = MESH_MAGIC + struct.pack("<II", MESH_VERSION, 0)
    header += struct.pack("<QQ", graph.node_count, graph.edge_count)
    return (
        header
        + np.ascontiguousarray(graph.edges, dtype="<u4").tobytes()
        + np.ascontiguousarray(graph.node_positions, dtype="<f8").tobytes()
    )


def decode_mesh(buf: bytes) -> MeshGraph:
    if len(buf) < 32 or buf[:8] != MESH_MAGIC:
        raise DataError("not a mesh file (bad magic)")
    version, _ = struct.unpack_from("<II", buf, 8)
    if version != MESH_VERSION:
        raise DataError(f"unsupported mesh file version {version}")
    n, e = struct.unpack_from("<QQ", buf, 16)
    expected = 32 + 8 * e + 16 * n
    if len(buf) != expected:
        raise DataError(f"mesh file size {len(buf)} != expected {expected}")
    edges = np.frombuffer(buf, dtype="<u4", count=2 * e, offset=32).reshape(e, 2)
    pos = np.frombuffer(buf, dtype="<f8", count=2 * n, offset=32 + 8 * e).reshape(n, 2)
    return build_mesh_graph(n, edges.astype(np.int64), pos.astype(np.float64))


def save_mesh(graph: MeshGraph, path) -> None:
    Path(path).write_bytes(encode_mesh(graph))


def load_mesh(path) -> MeshGraph:
    return decode_mesh(Path(path).read_bytes())
