"""Hot numeric kernels: CSR times dense propagation.

Each kernel has a numba version and a numpy version with the same
summation order per output row (entries in ascending column order), so the
two paths agree to rounding and each path is bitwise reproducible.
"""
import numpy as np

from ._accel import HAS_NUMBA, njit


def _ell_slots(indptr, indices, data):
    """CSR rows padded to equal length; padding has weight 0 and points at row 0."""
    counts = np.diff(indptr)
    width = int(counts.max()) if len(counts) else 0
    n = len(counts)
    cols = np.zeros((n, width), dtype=np.int64)
    vals = np.zeros((n, width))
    slot = np.arange(len(indices)) - np.repeat(indptr[:-1], counts)
    rows = np.repeat(np.arange(n), counts)
    cols[rows, slot] = indices
    vals[rows, slot] = data
    return cols, vals


def _csr_spmm_numpy(indptr, indices, data, x):
    # slot k of every row is added in turn: the same per-row order as the loop kernel
    cols, vals = _ell_slots(indptr, indices, data)
    out = np.zeros((len(cols), x.shape[1]))
    for k in range(cols.shape[1]):
        out += vals[:, k, None] * x[cols[:, k]]
    return out


@njit
def _csr_spmm_numba(indptr, indices, data, x):
    n, m = x.shape
    out = np.empty((n, m))
    for i in range(n):
        row = out[i]
        row[:] = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            v = data[k]
            xr = x[indices[k]]
            for c in range(m):
                row[c] += v * xr[c]
    return out


def csr_spmm_numpy(indptr, indices, data, x):
    """``A @ x`` for CSR ``A`` and a 2-D array ``x``, numpy implementation."""
    return _csr_spmm_numpy(indptr, indices, data, np.asarray(x, dtype=np.float64))


def csr_spmm_numba(indptr, indices, data, x):
    if not HAS_NUMBA:
        raise RuntimeError("numba path is disabled")
    return _csr_spmm_numba(indptr, indices, data, np.ascontiguousarray(x, dtype=np.float64))


csr_spmm = csr_spmm_numba if HAS_NUMBA else csr_spmm_numpy


def csr_to_dense(indptr, indices, data, n):
    out = np.zeros((n, n))
    rows = np.repeat(np.arange(n), np.diff(indptr))
    out[rows, indices] = data
    return out
