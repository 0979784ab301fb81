# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels. Semantics match ``ismp._pycore`` exactly."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, atan2, floor, fabs, INFINITY

cnp.import_array()

BACKEND = "cython"

cdef double TIE_EPS = 1e-12  # see _pycore.TIE_EPS


cdef inline double _snap(double x) nogil:
    return 0.0 if fabs(x) <= TIE_EPS else x

cdef double PI = 3.141592653589793
cdef double TWO_PI = 2.0 * 3.141592653589793


def fps(points, Py_ssize_t m, Py_ssize_t seed):
    cdef const double[:, ::1] P = np.ascontiguousarray(points, dtype=np.float64)
    cdef Py_ssize_t n = P.shape[0], dim = P.shape[1]
    out_arr = np.empty(m, dtype=np.int64)
    mind_arr = np.empty(n, dtype=np.float64)
    cdef cnp.int64_t[::1] out = out_arr
    cdef double[::1] mind = mind_arr
    cdef Py_ssize_t i, j, c, best
    cdef double acc, diff, bestd
    out[0] = seed
    with nogil:
        for j in range(n):
            diff = P[j, 0] - P[seed, 0]
            acc = diff * diff
            for c in range(1, dim):
                diff = P[j, c] - P[seed, c]
                acc = acc + diff * diff
            mind[j] = acc
        mind[seed] = -1.0
        for i in range(1, m):
            best = 0
            bestd = mind[0]
            for j in range(1, n):
                if mind[j] > bestd:
                    bestd = mind[j]
                    best = j
            out[i] = best
            for j in range(n):
                if mind[j] < 0.0:
                    continue
                diff = P[j, 0] - P[best, 0]
                acc = diff * diff
                for c in range(1, dim):
                    diff = P[j, c] - P[best, c]
                    acc = acc + diff * diff
                if acc < mind[j]:
                    mind[j] = acc
            mind[best] = -1.0
    return out_arr


def knn_brute(queries, base, Py_ssize_t k):
    cdef const double[:, ::1] Q = np.ascontiguousarray(queries, dtype=np.float64)
    cdef const double[:, ::1] B = np.ascontiguousarray(base, dtype=np.float64)
    cdef Py_ssize_t nq = Q.shape[0], nb = B.shape[0], dim = B.shape[1]
    dist_arr = np.empty((nq, k), dtype=np.float64)
    idx_arr = np.empty((nq, k), dtype=np.int64)
    cdef double[:, ::1] dist = dist_arr
    cdef cnp.int64_t[:, ::1] idx = idx_arr
    cdef Py_ssize_t i, j, c, s, filled
    cdef double acc, diff
    with nogil:
        for i in range(nq):
            filled = 0
            for j in range(nb):
                diff = Q[i, 0] - B[j, 0]
                acc = diff * diff
                for c in range(1, dim):
                    diff = Q[i, c] - B[j, c]
                    acc = acc + diff * diff
                # insertion into the sorted top-k; strict < keeps lower index first on ties
                if filled < k:
                    s = filled
                    filled += 1
                elif acc < dist[i, k - 1]:
                    s = k - 1
                else:
                    continue
                while s > 0 and acc < dist[i, s - 1]:
                    dist[i, s] = dist[i, s - 1]
                    idx[i, s] = idx[i, s - 1]
                    s -= 1
                dist[i, s] = acc
                idx[i, s] = j
            for s in range(k):
                dist[i, s] = sqrt(dist[i, s])
    return dist_arr, idx_arr


cdef inline Py_ssize_t _bin(double x, Py_ssize_t bins) nogil:
    cdef Py_ssize_t b = <Py_ssize_t> floor(x)
    if b < 0:
        return 0
    if b > bins - 1:
        return bins - 1
    return b


def spfh(points, normals, centers, neighbors, Py_ssize_t bins):
    cdef const double[:, ::1] P = np.ascontiguousarray(points, dtype=np.float64)
    cdef const double[:, ::1] N = np.ascontiguousarray(normals, dtype=np.float64)
    cdef const cnp.int64_t[::1] C = np.ascontiguousarray(centers, dtype=np.int64)
    cdef const cnp.int64_t[:, ::1] NB = np.ascontiguousarray(neighbors, dtype=np.int64)
    cdef Py_ssize_t nq = NB.shape[0], kk = NB.shape[1]
    hist_arr = np.zeros((nq, 3 * bins), dtype=np.float64)
    skipped_arr = np.zeros(nq, dtype=np.int64)
    cdef double[:, ::1] H = hist_arr
    cdef cnp.int64_t[::1] skipped = skipped_arr
    cdef Py_ssize_t i, j, s, t, b, valid, present
    cdef double d0, d1, d2, dn, a1, a2, f1, f2, f3, scale
    cdef double n10, n11, n12, n20, n21, n22
    cdef double v0, v1, v2, vn, w0, w1, w2
    with nogil:
        for i in range(nq):
            s = C[i]
            valid = 0
            present = 0
            for j in range(kk):
                t = NB[i, j]
                if t < 0:
                    continue
                present += 1
                d0 = P[t, 0] - P[s, 0]
                d1 = P[t, 1] - P[s, 1]
                d2 = P[t, 2] - P[s, 2]
                dn = sqrt(d0 * d0 + d1 * d1 + d2 * d2)
                if not dn > 0.0:
                    continue
                a1 = (N[s, 0] * d0 + N[s, 1] * d1 + N[s, 2] * d2) / dn
                a2 = (N[t, 0] * d0 + N[t, 1] * d1 + N[t, 2] * d2) / dn
                if fabs(a1) < fabs(a2) - TIE_EPS:
                    n10 = N[t, 0]; n11 = N[t, 1]; n12 = N[t, 2]
                    n20 = N[s, 0]; n21 = N[s, 1]; n22 = N[s, 2]
                    d0 = -d0; d1 = -d1; d2 = -d2
                    f3 = -a2
                else:
                    n10 = N[s, 0]; n11 = N[s, 1]; n12 = N[s, 2]
                    n20 = N[t, 0]; n21 = N[t, 1]; n22 = N[t, 2]
                    f3 = a1
                v0 = d1 * n12 - d2 * n11
                v1 = d2 * n10 - d0 * n12
                v2 = d0 * n11 - d1 * n10
                vn = sqrt(v0 * v0 + v1 * v1 + v2 * v2)
                if not vn > 0.0:
                    continue
                v0 = v0 / vn
                v1 = v1 / vn
                v2 = v2 / vn
                w0 = n11 * v2 - n12 * v1
                w1 = n12 * v0 - n10 * v2
                w2 = n10 * v1 - n11 * v0
                f2 = _snap(v0 * n20 + v1 * n21 + v2 * n22)
                f1 = atan2(_snap(w0 * n20 + w1 * n21 + w2 * n22), n10 * n20 + n11 * n21 + n12 * n22)
                f3 = _snap(f3)
                b = _bin(bins * (f1 + PI) / TWO_PI, bins)
                H[i, b] += 1.0
                b = _bin(bins * (f2 + 1.0) / 2.0, bins)
                H[i, bins + b] += 1.0
                b = _bin(bins * (f3 + 1.0) / 2.0, bins)
                H[i, 2 * bins + b] += 1.0
                valid += 1
            skipped[i] = present - valid
            if valid > 0:
                scale = 100.0 / valid
                for b in range(3 * bins):
                    H[i, b] = H[i, b] * scale
    return hist_arr, skipped_arr


def zbuffer_min(pixels, depth, Py_ssize_t npix):
    cdef const cnp.int64_t[::1] PX = np.ascontiguousarray(pixels, dtype=np.int64)
    cdef const double[::1] D = np.ascontiguousarray(depth, dtype=np.float64)
    raster_arr = np.full(npix, np.inf, dtype=np.float64)
    cdef double[::1] R = raster_arr
    cdef Py_ssize_t i, n = PX.shape[0]
    with nogil:
        for i in range(n):
            if D[i] < R[PX[i]]:
                R[PX[i]] = D[i]
    return raster_arr
