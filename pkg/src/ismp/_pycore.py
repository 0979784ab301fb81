"""Pure numpy implementations of the hot kernels.

These mirror ``ismp._core`` operation-for-operation (same summation order,
same comparisons) so both backends select the same indices and bins.
"""
import math

import numpy as np

BACKEND = "python"

# Structural ties (pairs with identical or opposite normals, coplanar pairs)
# would otherwise be decided by rounding noise and break rigid invariance:
# |a1| and |a2| closer than TIE_EPS count as equal and keep the query point as
# source, and feature values within TIE_EPS of zero are snapped to +0.
TIE_EPS = 1e-12


def _snap(x):
    return np.where(np.abs(x) <= TIE_EPS, 0.0, x)

_TWO_PI = 2.0 * math.pi


def _sq_dist_to(points, p):
    diff = points[:, 0] - p[0]
    acc = diff * diff
    for c in range(1, points.shape[1]):
        diff = points[:, c] - p[c]
        acc += diff * diff
    return acc


def fps(points, m, seed):
    """Greedy farthest point selection on squared Euclidean distance."""
    points = np.ascontiguousarray(points, dtype=np.float64)
    out = np.empty(m, dtype=np.int64)
    out[0] = seed
    mind = _sq_dist_to(points, points[seed])
    mind[seed] = -1.0
    for i in range(1, m):
        j = int(np.argmax(mind))
        out[i] = j
        np.minimum(mind, _sq_dist_to(points, points[j]), out=mind)
        mind[j] = -1.0
    return out


def knn_brute(queries, base, k):
    """Exhaustive k-NN; ties resolved by lower base index.

    Returns (distances, indices), both shaped (Q, k), ascending.
    """
    queries = np.ascontiguousarray(queries, dtype=np.float64)
    base = np.ascontiguousarray(base, dtype=np.float64)
    nq, nb = queries.shape[0], base.shape[0]
    dist = np.empty((nq, k), dtype=np.float64)
    idx = np.empty((nq, k), dtype=np.int64)
    chunk = max(1, 2_000_000 // max(nb, 1))
    for lo in range(0, nq, chunk):
        q = queries[lo:lo + chunk]
        diff = q[:, 0, None] - base[None, :, 0]
        d2 = diff * diff
        for c in range(1, base.shape[1]):
            diff = q[:, c, None] - base[None, :, c]
            d2 += diff * diff
        order = np.argsort(d2, axis=1, kind="stable")[:, :k]
        idx[lo:lo + chunk] = order
        dist[lo:lo + chunk] = np.sqrt(np.take_along_axis(d2, order, axis=1))
    return dist, idx


def spfh(points, normals, centers, neighbors, bins):
    """Simplified point feature histograms.

    ``neighbors`` is (Q, K) with -1 padding. Each of the three sub-histograms
    is scaled to sum to 100 over the valid pairs. Returns (hist, skipped).
    """
    points = np.asarray(points, dtype=np.float64)
    normals = np.asarray(normals, dtype=np.float64)
    centers = np.asarray(centers, dtype=np.int64)
    neighbors = np.asarray(neighbors, dtype=np.int64)
    nq, kk = neighbors.shape
    hist = np.zeros((nq, 3 * bins), dtype=np.float64)
    skipped = np.zeros(nq, dtype=np.int64)
    if nq == 0 or kk == 0:
        return hist, skipped

    present = neighbors >= 0
    nb = np.where(present, neighbors, 0)
    ps = points[centers][:, None, :]
    ns = np.broadcast_to(normals[centers][:, None, :], (nq, kk, 3))
    pt = points[nb]
    nt = normals[nb]

    d = pt - ps
    dnorm = np.sqrt(d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] + d[..., 2] * d[..., 2])
    ok = present & (dnorm > 0.0)
    safe = np.where(ok, dnorm, 1.0)
    a1 = _dot(ns, d) / safe
    a2 = _dot(nt, d) / safe
    swap = np.abs(a1) < np.abs(a2) - TIE_EPS
    n1 = np.where(swap[..., None], nt, ns)
    n2 = np.where(swap[..., None], ns, nt)
    dd = np.where(swap[..., None], -d, d)
    f3 = _snap(np.where(swap, -a2, a1))

    v = np.cross(dd, n1)
    vnorm = np.sqrt(v[..., 0] * v[..., 0] + v[..., 1] * v[..., 1] + v[..., 2] * v[..., 2])
    ok &= vnorm > 0.0
    v = v / np.where(vnorm > 0.0, vnorm, 1.0)[..., None]
    w = np.cross(n1, v)
    f2 = _snap(_dot(v, n2))
    f1 = np.arctan2(_snap(_dot(w, n2)), _dot(n1, n2))

    b1 = _bin(bins * (f1 + math.pi) / _TWO_PI, bins)
    b2 = _bin(bins * (f2 + 1.0) / 2.0, bins)
    b3 = _bin(bins * (f3 + 1.0) / 2.0, bins)

    rows = np.broadcast_to(np.arange(nq)[:, None], (nq, kk))[ok]
    flat = hist.reshape(-1)
    width = 3 * bins
    np.add.at(flat, rows * width + b1[ok], 1.0)
    np.add.at(flat, rows * width + bins + b2[ok], 1.0)
    np.add.at(flat, rows * width + 2 * bins + b3[ok], 1.0)

    valid = ok.sum(axis=1)
    skipped[:] = present.sum(axis=1) - valid
    scale = np.where(valid > 0, 100.0 / np.maximum(valid, 1), 0.0)
    hist *= scale[:, None]
    return hist, skipped


def _dot(a, b):
    return a[..., 0] * b[..., 0] + a[..., 1] * b[..., 1] + a[..., 2] * b[..., 2]


def _bin(x, bins):
    b = np.floor(x).astype(np.int64)
    return np.clip(b, 0, bins - 1)


def zbuffer_min(pixels, depth, npix):
    """Per-pixel minimum depth; empty pixels are +inf."""
    raster = np.full(npix, np.inf, dtype=np.float64)
    np.minimum.at(raster, np.asarray(pixels, dtype=np.int64), np.asarray(depth, dtype=np.float64))
    return raster
