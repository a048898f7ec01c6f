"""Independent reference implementations used as test oracles.

Nothing here calls into the code paths it checks; everything is written from
the definitions with plain loops.
"""

import itertools
import math

import numpy as np


def loop_distance(u, v):
    return math.sqrt(sum((float(a) - float(b)) ** 2 for a, b in zip(u, v)))


def loop_matvec(vec, mat):
    """vec @ mat by explicit loops (vec: length r, mat: r x c)."""
    rows, cols = mat.shape
    return np.array([sum(float(vec[i]) * float(mat[i, j]) for i in range(rows))
                     for j in range(cols)])


def brute_ranking(query, gallery):
    d = [loop_distance(query, g) for g in gallery]
    return sorted(range(len(gallery)), key=lambda j: (d[j], j))


def brute_ap(query, qlabel, gallery, glabels):
    order = brute_ranking(query, gallery)
    relevant = sum(1 for lab in glabels if lab == qlabel)
    if relevant == 0:
        return None
    found = 0
    total = 0.0
    for pos, j in enumerate(order, start=1):
        if glabels[j] == qlabel:
            found += 1
            total += found / pos
    return total / relevant


def brute_map(queries, qlabels, gallery, glabels):
    aps = [brute_ap(q, l, gallery, glabels) for q, l in zip(queries, qlabels)]
    aps = [a for a in aps if a is not None]
    return sum(aps) / len(aps)


def brute_rank_k(queries, qlabels, gallery, glabels, k):
    hits = []
    for q, l in zip(queries, qlabels):
        if l not in list(glabels):
            continue
        top = brute_ranking(q, gallery)[:k]
        hits.append(any(glabels[j] == l for j in top))
    return sum(hits) / len(hits)


def best_subset(m, keep):
    """Subset of ``keep`` columns with the largest retained squared Frobenius norm (exhaustive)."""
    best, best_val = None, -1.0
    for cols in itertools.combinations(range(m.shape[1]), keep):
        val = sum(float(m[i, j]) ** 2 for i in range(m.shape[0]) for j in cols)
        if val > best_val:
            best, best_val = cols, val
    return best


def central_difference(f, params, h=1e-6):
    """Numerical gradient of scalar ``f()`` w.r.t. every array in the dict ``params`` (mutated in place, restored)."""
    grads = {}
    for name, arr in params.items():
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = arr[idx]
            arr[idx] = old + h
            fp = f()
            arr[idx] = old - h
            fm = f()
            arr[idx] = old
            g[idx] = (fp - fm) / (2 * h)
        grads[name] = g
    return grads


def rel_error(analytic, numeric):
    a = np.ravel(analytic)
    n = np.ravel(numeric)
    denom = max(np.linalg.norm(a), np.linalg.norm(n), 1e-12)
    return float(np.linalg.norm(a - n) / denom)
