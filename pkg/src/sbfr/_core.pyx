# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: counter-based normals and cell-grid neighbor sums.

Function-for-function twin of ``sbfr._fallback``.
"""

import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport sqrt, log, cos, sin, floor, fabs
from libc.stdint cimport uint32_t, uint64_t, int64_t

cnp.import_array()

NAME = "cython"

cdef double TWO_PI = 6.283185307179586
cdef double INV53 = 1.0 / 9007199254740992.0
cdef uint64_t MASK32 = 0xFFFFFFFF
cdef uint64_t MUL0 = 0xD2511F53
cdef uint64_t MUL1 = 0xCD9E8D57
cdef uint32_t WEYL0 = 0x9E3779B9
cdef uint32_t WEYL1 = 0xBB67AE85
cdef uint64_t SCALE26 = 67108864


cdef inline void _philox(uint32_t* c, uint32_t k0, uint32_t k1) noexcept nogil:
    cdef uint64_t p0, p1
    cdef uint32_t a0, a1, a2, a3
    cdef int r
    for r in range(10):
        p0 = <uint64_t>c[0] * MUL0
        p1 = <uint64_t>c[2] * MUL1
        a0 = <uint32_t>(p1 >> 32) ^ c[1] ^ k0
        a1 = <uint32_t>p1
        a2 = <uint32_t>(p0 >> 32) ^ c[3] ^ k1
        a3 = <uint32_t>p0
        c[0] = a0
        c[1] = a1
        c[2] = a2
        c[3] = a3
        k0 = k0 + WEYL0
        k1 = k1 + WEYL1


cdef inline double _unit(uint32_t hi, uint32_t lo) noexcept nogil:
    cdef uint64_t x = (<uint64_t>(hi >> 5)) * SCALE26 + <uint64_t>(lo >> 6)
    return (<double>x + 0.5) * INV53


def philox4x32(c0, c1, c2, c3, k0, k1):
    """Scalar Philox4x32-10 block, for known-answer tests."""
    cdef uint32_t c[4]
    c[0] = c0; c[1] = c1; c[2] = c2; c[3] = c3
    _philox(c, k0, k1)
    return c[0], c[1], c[2], c[3]


cdef _fill(uint64_t seed, unsigned int domain, const int64_t[::1] idx, uint64_t slot,
           int count, bint normal):
    cdef Py_ssize_t n = idx.shape[0]
    cdef int nblocks = (count + 1) // 2
    out_arr = np.empty((n, 2 * nblocks), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef uint32_t k0 = <uint32_t>(seed & MASK32)
    cdef uint32_t k1 = <uint32_t>(seed >> 32)
    cdef uint32_t c[4]
    cdef Py_ssize_t i
    cdef int b
    cdef uint64_t ix
    cdef double u1, u2, rad
    with nogil:
        for i in range(n):
            ix = <uint64_t>idx[i]
            for b in range(nblocks):
                c[0] = <uint32_t>(ix & MASK32)
                c[1] = <uint32_t>(ix >> 32)
                c[2] = <uint32_t>(slot & MASK32)
                c[3] = (<uint32_t>(domain & 65535) << 16) | <uint32_t>b
                _philox(c, k0, k1)
                u1 = _unit(c[0], c[1])
                u2 = _unit(c[2], c[3])
                if normal:
                    rad = sqrt(-2.0 * log(u1))
                    out[i, 2 * b] = rad * cos(TWO_PI * u2)
                    out[i, 2 * b + 1] = rad * sin(TWO_PI * u2)
                else:
                    out[i, 2 * b] = u1
                    out[i, 2 * b + 1] = u2
    return out_arr[:, :count]


def philox_uniforms(seed, domain, indices, slot, count):
    idx = np.ascontiguousarray(indices, dtype=np.int64)
    return _fill(<uint64_t>(int(seed) & 0xFFFFFFFFFFFFFFFF), domain, idx, slot, count, False)


def philox_normals(seed, domain, indices, slot, count):
    idx = np.ascontiguousarray(indices, dtype=np.int64)
    return _fill(<uint64_t>(int(seed) & 0xFFFFFFFFFFFFFFFF), domain, idx, slot, count, True)


cdef inline Py_ssize_t _find(const int64_t[::1] ids, int64_t key) noexcept nogil:
    cdef Py_ssize_t lo = 0, hi = ids.shape[0], mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if ids[mid] < key:
            lo = mid + 1
        else:
            hi = mid
    if lo < ids.shape[0] and ids[lo] == key:
        return lo
    return -1


cdef inline bint _next_offset(int64_t* off, int d) noexcept nogil:
    # odometer over {-1, 0, 1}^d, last axis fastest
    cdef int j = d - 1
    while j >= 0:
        if off[j] < 1:
            off[j] += 1
            return True
        off[j] = -1
        j -= 1
    return False


cdef Py_ssize_t _visit(const double[:, ::1] pts, const int64_t[::1] ids,
                       const int64_t[::1] offsets, const int64_t[::1] dims,
                       const double[::1] origin, double cell,
                       const double[:, ::1] queries, Py_ssize_t q, double radius,
                       int64_t* off, int64_t* qc,
                       int64_t* out_q, int64_t* out_p, bint store) noexcept nogil:
    cdef int d = pts.shape[1]
    cdef int j
    cdef Py_ssize_t found = 0, pos, a, b, p
    cdef int64_t lin, nc
    cdef bint inside
    cdef double dist, dj
    for j in range(d):
        qc[j] = <int64_t>floor((queries[q, j] - origin[j]) / cell)
        off[j] = -1
    while True:
        inside = True
        lin = 0
        for j in range(d):
            nc = qc[j] + off[j]
            if nc < 0 or nc >= dims[j]:
                inside = False
                break
            lin = lin * dims[j] + nc
        if inside:
            pos = _find(ids, lin)
            if pos >= 0:
                a = offsets[pos]
                b = offsets[pos + 1]
                for p in range(a, b):
                    dist = 0.0
                    for j in range(d):
                        dj = fabs(queries[q, j] - pts[p, j])
                        if dj > dist:
                            dist = dj
                    if dist <= radius:
                        if store:
                            out_q[found] = q
                            out_p[found] = p
                        found += 1
        if not _next_offset(off, d):
            break
    return found


def grid_pairs(points, cell_ids, offsets, dims, origin, double cell, queries, double radius):
    cdef const double[:, ::1] pts = np.ascontiguousarray(points, dtype=np.float64)
    cdef const double[:, ::1] qs = np.ascontiguousarray(queries, dtype=np.float64)
    cdef const int64_t[::1] ids = np.ascontiguousarray(cell_ids, dtype=np.int64)
    cdef const int64_t[::1] offs = np.ascontiguousarray(offsets, dtype=np.int64)
    cdef const int64_t[::1] dm = np.ascontiguousarray(dims, dtype=np.int64)
    cdef const double[::1] org = np.ascontiguousarray(origin, dtype=np.float64)
    cdef Py_ssize_t nq = qs.shape[0], q, total = 0, pos = 0
    cdef int d = qs.shape[1]
    if nq == 0 or pts.shape[0] == 0:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    off_arr = np.empty(d, dtype=np.int64)
    qc_arr = np.empty(d, dtype=np.int64)
    cdef int64_t[::1] off = off_arr
    cdef int64_t[::1] qc = qc_arr
    counts_arr = np.empty(nq, dtype=np.int64)
    cdef int64_t[::1] counts = counts_arr
    with nogil:
        for q in range(nq):
            counts[q] = _visit(pts, ids, offs, dm, org, cell, qs, q, radius,
                               &off[0], &qc[0], NULL, NULL, False)
            total += counts[q]
    out_q_arr = np.empty(total, dtype=np.int64)
    out_p_arr = np.empty(total, dtype=np.int64)
    cdef int64_t[::1] oq = out_q_arr
    cdef int64_t[::1] op = out_p_arr
    if total > 0:
        with nogil:
            for q in range(nq):
                if counts[q] > 0:
                    _visit(pts, ids, offs, dm, org, cell, qs, q, radius,
                           &off[0], &qc[0], &oq[pos], &op[pos], True)
                    pos += counts[q]
    return out_q_arr, out_p_arr


cdef void _kernel_row(const double[:, ::1] pts, const double[:, ::1] vals,
                      const int64_t[::1] ids, const int64_t[::1] offsets,
                      const int64_t[::1] dims, const double[::1] origin, double cell,
                      const double[:, ::1] queries, Py_ssize_t q, double bw,
                      double[:, ::1] out) noexcept nogil:
    cdef int d = pts.shape[1]
    cdef int k = vals.shape[1]
    cdef int j, c
    cdef int64_t off[32]
    cdef int64_t qc[32]
    cdef int64_t lin, nc
    cdef bint inside, skip
    cdef Py_ssize_t pos, a, b, p
    cdef double u, w
    for j in range(d):
        qc[j] = <int64_t>floor((queries[q, j] - origin[j]) / cell)
        off[j] = -1
    for c in range(k):
        out[q, c] = 0.0
    while True:
        inside = True
        lin = 0
        for j in range(d):
            nc = qc[j] + off[j]
            if nc < 0 or nc >= dims[j]:
                inside = False
                break
            lin = lin * dims[j] + nc
        if inside:
            pos = _find(ids, lin)
            if pos >= 0:
                a = offsets[pos]
                b = offsets[pos + 1]
                for p in range(a, b):
                    skip = False
                    for j in range(d):
                        if fabs(queries[q, j] - pts[p, j]) > 0.5 * bw:
                            skip = True
                            break
                    if skip:
                        continue
                    w = 1.0
                    for j in range(d):
                        u = (queries[q, j] - pts[p, j]) / bw
                        w = w * (1.5 * (1.0 - 4.0 * u * u))
                    for c in range(k):
                        out[q, c] = out[q, c] + w * vals[p, c]
        if not _next_offset(off, d):
            break


def grid_kernel_sums(points, values, cell_ids, offsets, dims, origin, double cell, queries,
                     double bandwidth, threads=1, chunk=None):
    cdef const double[:, ::1] pts = np.ascontiguousarray(points, dtype=np.float64)
    cdef const double[:, ::1] vals = np.ascontiguousarray(values, dtype=np.float64)
    cdef const double[:, ::1] qs = np.ascontiguousarray(queries, dtype=np.float64)
    cdef const int64_t[::1] ids = np.ascontiguousarray(cell_ids, dtype=np.int64)
    cdef const int64_t[::1] offs = np.ascontiguousarray(offsets, dtype=np.int64)
    cdef const int64_t[::1] dm = np.ascontiguousarray(dims, dtype=np.int64)
    cdef const double[::1] org = np.ascontiguousarray(origin, dtype=np.float64)
    cdef Py_ssize_t nq = qs.shape[0], q
    cdef int nthreads = max(1, int(threads))
    if qs.shape[1] > 32:
        raise ValueError("dimension above 32 is not supported by the compiled kernel")
    out_arr = np.zeros((nq, vals.shape[1]), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    if nq == 0 or pts.shape[0] == 0:
        return out_arr
    for q in prange(nq, nogil=True, num_threads=nthreads, schedule="static"):
        _kernel_row(pts, vals, ids, offs, dm, org, cell, qs, q, bandwidth, out)
    return out_arr
