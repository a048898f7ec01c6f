"""Dense kernels: products, euclidean distances and column norms.

Matrices are plain 2-D numpy arrays. Inputs are stored as float32; products
and reductions accumulate in float64.
"""

import numpy as np

from .errors import DimensionError

# query rows per block in pairwise_distances; bounds the (q, g, d) temporary
_BLOCK = 64


def as_matrix(m, dtype=np.float32):
    m = np.asarray(m, dtype=dtype)
    if m.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {m.shape}")
    return m


def matmul(a, b):
    """Matrix product with float64 accumulation, returned as float32."""
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    out = a.astype(np.float64) @ b.astype(np.float64)
    return out.astype(np.float32)


def euclidean_distance(u, v):
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.ndim != 1 or u.shape != v.shape:
        raise DimensionError(f"vector lengths differ: {u.shape} vs {v.shape}")
    diff = u - v
    return float(np.sqrt(np.sum(diff * diff)))


def pairwise_distances(queries, gallery):
    """Distance from every query row to every gallery row.

    Uses the direct ``sqrt(sum((q - g)**2))`` form rather than the
    norm-expansion shortcut, so self-distances are exactly zero.
    Returns a float64 array of shape ``(len(queries), len(gallery))``.
    """
    q = np.asarray(queries, dtype=np.float64)
    g = np.asarray(gallery, dtype=np.float64)
    if q.ndim != 2 or g.ndim != 2 or q.shape[1] != g.shape[1]:
        raise DimensionError(f"cannot compare {q.shape} with {g.shape}")
    out = np.empty((q.shape[0], g.shape[0]), dtype=np.float64)
    for start in range(0, q.shape[0], _BLOCK):
        diff = q[start:start + _BLOCK, None, :] - g[None, :, :]
        out[start:start + _BLOCK] = np.sqrt(np.sum(diff * diff, axis=-1))
    return out


def column_l2_norms(m):
    """Per-column L2 norm; the squares sum to the squared Frobenius norm."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {m.shape}")
    if m.shape[0] < 1:
        raise ValueError("column_l2_norms needs at least one row")
    return np.sqrt(np.sum(m * m, axis=0))
