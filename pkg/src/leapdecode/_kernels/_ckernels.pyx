# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot kernels. Mirrors ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, expf, sqrt

cnp.import_array()

ctypedef unsigned long long u64

cdef u64 GOLDEN = 0x9E3779B97F4A7C15ULL
cdef u64 MIX1 = 0xBF58476D1CE4E5B9ULL
cdef u64 MIX2 = 0x94D049BB133111EBULL
cdef double INV_2_53 = 1.0 / 9007199254740992.0
cdef float NEG_INF = -1e9


cdef inline u64 _next(u64* state) nogil:
    state[0] += GOLDEN
    cdef u64 z = state[0]
    z = (z ^ (z >> 30)) * MIX1
    z = (z ^ (z >> 27)) * MIX2
    return z ^ (z >> 31)


def splitmix64_raw(state, Py_ssize_t n):
    cdef u64 s = <u64>(int(state) & 0xFFFFFFFFFFFFFFFF)
    cdef cnp.ndarray[cnp.uint64_t, ndim=1] out = np.empty(n, dtype=np.uint64)
    cdef Py_ssize_t k
    for k in range(n):
        out[k] = _next(&s)
    return out, int(s)


def splitmix64_uniform(state, Py_ssize_t n):
    cdef u64 s = <u64>(int(state) & 0xFFFFFFFFFFFFFFFF)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n, dtype=np.float64)
    cdef Py_ssize_t k
    for k in range(n):
        out[k] = (_next(&s) >> 11) * INV_2_53
    return out, int(s)


def masked_attention(q, k, v, mask):
    cdef const float[:, :, ::1] Q = np.ascontiguousarray(q, dtype=np.float32)
    cdef const float[:, :, ::1] K = np.ascontiguousarray(k, dtype=np.float32)
    cdef const float[:, :, ::1] Vv = np.ascontiguousarray(v, dtype=np.float32)
    cdef const cnp.uint8_t[:, ::1] M = np.ascontiguousarray(mask, dtype=np.uint8)
    cdef Py_ssize_t H = Q.shape[0], R = Q.shape[1], dh = Q.shape[2]
    out_arr = np.zeros((H, R, dh), dtype=np.float32)
    cdef float[:, :, ::1] O = out_arr
    cdef float[::1] w = np.empty(max(R, 1), dtype=np.float32)
    # visible key indices per query row; masked keys get exactly zero weight
    cdef Py_ssize_t[::1] vis = np.empty(max(R * R, 1), dtype=np.intp)
    cdef Py_ssize_t[::1] nvis = np.zeros(max(R, 1), dtype=np.intp)
    cdef float scale = <float>(1.0 / sqrt(<double>dh))
    cdef Py_ssize_t h, i, j, jj, d, n
    cdef float s, mx, tot
    cdef const float* qi
    cdef const float* kj
    cdef const float* vj
    cdef float* oi
    with nogil:
        for i in range(R):
            n = 0
            for j in range(R):
                if M[i, j]:
                    vis[i * R + n] = j
                    n = n + 1
            nvis[i] = n
        for h in range(H):
            for i in range(R):
                qi = &Q[h, i, 0]
                n = nvis[i]
                mx = -3.0e38
                for jj in range(n):
                    kj = &K[h, vis[i * R + jj], 0]
                    s = 0.0
                    for d in range(dh):
                        s = s + qi[d] * kj[d]
                    s = s * scale
                    w[jj] = s
                    if s > mx:
                        mx = s
                tot = 0.0
                for jj in range(n):
                    w[jj] = expf(w[jj] - mx)
                    tot = tot + w[jj]
                oi = &O[h, i, 0]
                for jj in range(n):
                    s = w[jj] / tot
                    vj = &Vv[h, vis[i * R + jj], 0]
                    for d in range(dh):
                        oi[d] = oi[d] + s * vj[d]
    return out_arr


def chain_posteriors(init, trans, obs):
    cdef const double[::1] pi0 = np.ascontiguousarray(init, dtype=np.float64)
    cdef const double[:, ::1] P = np.ascontiguousarray(trans, dtype=np.float64)
    cdef const long long[::1] x = np.ascontiguousarray(obs, dtype=np.int64)
    cdef Py_ssize_t n = x.shape[0], V = pi0.shape[0]
    fwd_arr = np.empty((n, V), dtype=np.float64)
    bwd_arr = np.empty((n, V), dtype=np.float64)
    cdef double[:, ::1] F = fwd_arr
    cdef double[:, ::1] B = bwd_arr
    cdef double[::1] tmp = np.empty(V, dtype=np.float64)
    cdef Py_ssize_t k, a, b
    cdef double s, acc
    for k in range(n):
        for b in range(V):
            if k == 0:
                tmp[b] = pi0[b]
            else:
                acc = 0.0
                for a in range(V):
                    acc += F[k - 1, a] * P[a, b]
                tmp[b] = acc
        if x[k] >= 0:
            for b in range(V):
                if b != x[k]:
                    tmp[b] = 0.0
        s = 0.0
        for b in range(V):
            s += tmp[b]
        if s <= 0.0:
            raise ValueError("evidence has zero probability under the chain")
        for b in range(V):
            F[k, b] = tmp[b] / s

    for b in range(V):
        B[n - 1, b] = 1.0
    for k in range(n - 2, -1, -1):
        for a in range(V):
            acc = 0.0
            if x[k + 1] >= 0:
                acc = P[a, x[k + 1]] * B[k + 1, x[k + 1]]
            else:
                for b in range(V):
                    acc += P[a, b] * B[k + 1, b]
            tmp[a] = acc
        s = 0.0
        for a in range(V):
            s += tmp[a]
        if s <= 0.0:
            raise ValueError("evidence has zero probability under the chain")
        for a in range(V):
            B[k, a] = tmp[a] / s

    for k in range(n):
        s = 0.0
        for a in range(V):
            F[k, a] = F[k, a] * B[k, a]
            s += F[k, a]
        for a in range(V):
            F[k, a] = F[k, a] / s
    return fwd_arr


def lookahead_agrees(left, right, Py_ssize_t base):
    cdef const double[:, ::1] Lm = np.ascontiguousarray(left, dtype=np.float64)
    cdef const double[:, ::1] Rm = np.ascontiguousarray(right, dtype=np.float64)
    cdef Py_ssize_t nl = Lm.shape[0], nr = Rm.shape[0], V = Lm.shape[1]
    cdef Py_ssize_t a, b, v, best
    cdef double p, bestp, tot
    for a in range(nl):
        for b in range(nr):
            best = 0
            bestp = -1.0
            tot = 0.0
            for v in range(V):
                p = Lm[a, v] * Rm[b, v]
                tot += p
                if p > bestp:
                    bestp = p
                    best = v
            if tot > 0.0 and best != base:
                return False
    return True
