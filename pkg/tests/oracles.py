"""Slow, direct reference implementations used only by the tests.

Nothing here imports the code under test.
"""
import math

import numpy as np


def dist(a, b):
    return math.sqrt(sum((float(x) - float(y)) ** 2 for x, y in zip(a, b)))


def fps(points, m, seed=0):
    """Maximin selection by enumerating every candidate each round."""
    chosen = [seed]
    n = len(points)
    while len(chosen) < m:
        best, best_d = None, -1.0
        for j in range(n):
            if j in chosen:
                continue
            d = min(sum((points[j][c] - points[i][c]) ** 2 for c in range(len(points[j])))
                    for i in chosen)
            if d > best_d:
                best, best_d = j, d
        chosen.append(best)
    return chosen


def knn(points, q, k):
    d2 = [(sum((p[c] - q[c]) ** 2 for c in range(len(q))), i) for i, p in enumerate(points)]
    d2.sort()
    return [math.sqrt(d) for d, _ in d2[:k]], [i for _, i in d2[:k]]


def radius_members(points, center_idx, r, k_max):
    c = points[center_idx]
    found = sorted((dist(p, c), i) for i, p in enumerate(points) if dist(p, c) <= r)
    ids = [center_idx] + [i for _, i in found if i != center_idx]
    return ids[:k_max]


# ---------------------------------------------------------------------------
# FPFH

def _sub(a, b):
    return [a[0] - b[0], a[1] - b[1], a[2] - b[2]]


def _dot(a, b):
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


def _cross(a, b):
    return [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]


TIE = 1e-12


def _zero(x):
    return 0.0 if abs(x) <= TIE else x


def pair_features(ps, ns, pt, nt):
    """(theta, alpha, phi) for a point pair, or None if degenerate."""
    d = _sub(pt, ps)
    dn = math.sqrt(_dot(d, d))
    if dn == 0:
        return None
    a1 = _dot(ns, d) / dn
    a2 = _dot(nt, d) / dn
    if abs(a1) < abs(a2) - TIE:  # equal angles: the query point stays source
        n1, n2, d, f3 = nt, ns, [-d[0], -d[1], -d[2]], -a2
    else:
        n1, n2, f3 = ns, nt, a1
    v = _cross(d, n1)
    vn = math.sqrt(_dot(v, v))
    if vn == 0:
        return None
    v = [v[0] / vn, v[1] / vn, v[2] / vn]
    w = _cross(n1, v)
    f2 = _zero(_dot(v, n2))
    f1 = math.atan2(_zero(_dot(w, n2)), _dot(n1, n2))
    return f1, f2, _zero(f3)


def _bin(x, bins):
    return min(max(int(math.floor(x)), 0), bins - 1)


def spfh_point(points, normals, i, nbrs, bins):
    hist = [0.0] * (3 * bins)
    valid = 0
    for j in nbrs:
        f = pair_features(points[i], normals[i], points[j], normals[j])
        if f is None:
            continue
        f1, f2, f3 = f
        hist[_bin(bins * (f1 + math.pi) / (2 * math.pi), bins)] += 1
        hist[bins + _bin(bins * (f2 + 1.0) / 2.0, bins)] += 1
        hist[2 * bins + _bin(bins * (f3 + 1.0) / 2.0, bins)] += 1
        valid += 1
    if valid:
        hist = [h * (100.0 / valid) for h in hist]
    return hist


def neighbors_excluding_self(points, i, k):
    k = min(k, len(points) - 1)
    order = sorted((sum((points[j][c] - points[i][c]) ** 2 for c in range(3)), j)
                   for j in range(len(points)) if j != i)
    return [j for _, j in order[:k]], [math.sqrt(d) for d, _ in order[:k]]


def fpfh(points, normals, queries, bins=11, k=16):
    points = [list(map(float, p)) for p in points]
    normals = [list(map(float, n)) for n in normals]
    out = []
    for q in queries:
        nb, dd = neighbors_excluding_self(points, q, k)
        own = spfh_point(points, normals, q, nb, bins)
        acc = [0.0] * (3 * bins)
        used = 0
        for j, w in zip(nb, dd):
            if w <= 0:
                continue
            nb_j, _ = neighbors_excluding_self(points, j, k)
            s = spfh_point(points, normals, j, nb_j, bins)
            for b in range(3 * bins):
                acc[b] += s[b] / w
            used += 1
        row = [own[b] + (acc[b] / used if used else 0.0) for b in range(3 * bins)]
        for blk in range(3):
            tot = sum(row[blk * bins:(blk + 1) * bins])
            for b in range(blk * bins, (blk + 1) * bins):
                row[b] = row[b] * 100.0 / tot if tot > 0 else 0.0
        out.append(row)
    return np.array(out)


# ---------------------------------------------------------------------------
# Laplacian filter: dense matrices, following the published pseudo-code line by line

def laplacian_filter(X, alpha, beta, gamma):
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    A = np.ones((n, n)) - np.eye(n)
    M = np.sqrt(((X[:, None, :] - X[None, :, :]) ** 2).sum(axis=2))
    W = np.exp(-beta * M)
    A2 = A * W
    D2 = np.diag(A2.sum(axis=1))
    D2_inv_sqrt = np.diag(np.diag(D2) ** -0.5)
    L_sym = np.eye(n) - D2_inv_sqrt @ A2 @ D2_inv_sqrt
    masked = np.where(A == 0, np.nan, M)
    E = np.nanmean(masked, axis=1)
    L_final = L_sym + gamma * np.diag(E)
    X_enh = (np.eye(n) + alpha * L_final) @ X
    return X_enh * (X.max() / X_enh.max())


def laplacian_filter_unscaled(X, alpha, beta, gamma):
    """The same pipeline stopped before the max rescale."""
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    L = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i != j:
                L[i, j] = math.exp(-beta * math.dist(X[i], X[j]))
    deg = L.sum(axis=1)
    out = np.empty_like(X)
    for i in range(n):
        e = sum(math.dist(X[i], X[j]) for j in range(n) if j != i) / (n - 1)
        for c in range(X.shape[1]):
            smooth = sum(L[i, j] * X[j, c] / math.sqrt(deg[i] * deg[j]) for j in range(n))
            out[i, c] = X[i, c] + alpha * (X[i, c] - smooth + gamma * e * X[i, c])
    return out


# ---------------------------------------------------------------------------
# scoring and metrics

def nearest_three(test, bank):
    """Per test row: sorted (distance, index) pairs of its 3 nearest bank rows."""
    out = []
    for t in test:
        d = sorted((dist(t, b), j) for j, b in enumerate(bank))
        out.append(d[:3])
    return out


def reweight(dists):
    e = [math.exp(d) for d in dists]
    return 1.0 - e[0] / sum(e)


def auroc_pairs(scores, labels):
    pos = [s for s, l in zip(scores, labels) if l]
    neg = [s for s, l in zip(scores, labels) if not l]
    wins = 0.0
    for p in pos:
        for q in neg:
            wins += 1.0 if p > q else (0.5 if p == q else 0.0)
    return wins / (len(pos) * len(neg))


def info_measures(z):
    z = [float(v) for v in z]
    zmax, zmin = max(z), min(z)
    zmid = (zmin + zmax) / 2
    top = sum(zmax - v for v in z)
    glob = sum((zmax - v) + max(0.0, v - zmid) for v in z)
    return top, glob


def rotation(axis, degrees):
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    th = math.radians(degrees)
    K = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + math.sin(th) * K + (1 - math.cos(th)) * K @ K


def rotation_angle_deg(R):
    c = (np.trace(R) - 1.0) / 2.0
    return math.degrees(math.acos(min(1.0, max(-1.0, c))))
