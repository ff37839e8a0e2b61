"""Pure numpy implementations of the hot kernels.

Mirrors the compiled ``_core`` module function for function; used when the
extension is unavailable or ``SBFR_PURE_PYTHON=1`` is set.
"""

import numpy as np

NAME = "numpy"

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_TWO_PI = 6.283185307179586
_INV53 = 1.0 / 9007199254740992.0


def philox4x32(c0, c1, c2, c3, k0, k1):
    """Philox4x32-10 on uint64 arrays holding 32-bit words."""
    c0 = np.asarray(c0, dtype=np.uint64)
    c1 = np.asarray(c1, dtype=np.uint64)
    c2 = np.asarray(c2, dtype=np.uint64)
    c3 = np.asarray(c3, dtype=np.uint64)
    k0 = np.uint64(k0)
    k1 = np.uint64(k1)
    for _ in range(10):
        p0 = c0 * _M0
        p1 = c2 * _M1
        c0, c1, c2, c3 = (
            ((p1 >> _S32) ^ c1 ^ k0) & _MASK,
            p1 & _MASK,
            ((p0 >> _S32) ^ c3 ^ k1) & _MASK,
            p0 & _MASK,
        )
        k0 = (k0 + _W0) & _MASK
        k1 = (k1 + _W1) & _MASK
    return c0, c1, c2, c3


def _blocks(seed, domain, indices, slot, nblocks):
    idx = np.asarray(indices, dtype=np.int64).astype(np.uint64)[:, None]
    blk = np.arange(nblocks, dtype=np.uint64)[None, :]
    c0 = np.broadcast_to(idx & _MASK, (idx.shape[0], nblocks))
    c1 = np.broadcast_to(idx >> _S32, (idx.shape[0], nblocks))
    c2 = np.full((idx.shape[0], nblocks), np.uint64(slot) & _MASK, dtype=np.uint64)
    c3 = (np.uint64(domain & 0xFFFF) << np.uint64(16)) | blk
    c3 = np.broadcast_to(c3, (idx.shape[0], nblocks))
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    return philox4x32(c0, c1, c2, c3, seed & 0xFFFFFFFF, seed >> 32)


def _to_unit(hi, lo):
    x = (hi >> np.uint64(5)) * np.uint64(67108864) + (lo >> np.uint64(6))
    return (x.astype(np.float64) + 0.5) * _INV53


def philox_uniforms(seed, domain, indices, slot, count):
    n = len(indices)
    nblocks = (count + 1) // 2
    r0, r1, r2, r3 = _blocks(seed, domain, indices, slot, nblocks)
    out = np.empty((n, 2 * nblocks))
    out[:, 0::2] = _to_unit(r0, r1)
    out[:, 1::2] = _to_unit(r2, r3)
    return out[:, :count]


def philox_normals(seed, domain, indices, slot, count):
    n = len(indices)
    nblocks = (count + 1) // 2
    r0, r1, r2, r3 = _blocks(seed, domain, indices, slot, nblocks)
    u1 = _to_unit(r0, r1)
    u2 = _to_unit(r2, r3)
    rad = np.sqrt(-2.0 * np.log(u1))
    ang = _TWO_PI * u2
    out = np.empty((n, 2 * nblocks))
    out[:, 0::2] = rad * np.cos(ang)
    out[:, 1::2] = rad * np.sin(ang)
    return out[:, :count]


def _neighbor_offsets(d):
    grids = np.meshgrid(*([np.array([-1, 0, 1])] * d), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1).astype(np.int64)


def grid_pairs(points, cell_ids, offsets, dims, origin, cell, queries, radius):
    """Index pairs (query, sorted point) with max-norm distance <= radius.

    Pairs come out ordered by query, then neighbor-cell offset, then point
    position, the same order the compiled loop visits them.
    """
    queries = np.ascontiguousarray(queries, dtype=np.float64)
    nq, d = queries.shape
    if nq == 0 or points.shape[0] == 0:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    qc = np.floor((queries - origin) / cell).astype(np.int64)
    strides = np.ones(d, dtype=np.int64)
    for j in range(d - 2, -1, -1):
        strides[j] = strides[j + 1] * dims[j + 1]
    q_parts, p_parts, o_parts = [], [], []
    for k, off in enumerate(_neighbor_offsets(d)):
        nc = qc + off
        ok = np.all((nc >= 0) & (nc < dims), axis=1)
        if not ok.any():
            continue
        qi = np.nonzero(ok)[0]
        lin = nc[qi] @ strides
        pos = np.searchsorted(cell_ids, lin)
        pos = np.minimum(pos, len(cell_ids) - 1)
        hit = cell_ids[pos] == lin
        qi = qi[hit]
        pos = pos[hit]
        start = offsets[pos]
        count = offsets[pos + 1] - start
        if count.sum() == 0:
            continue
        rep_q = np.repeat(qi, count)
        base = np.repeat(start - np.concatenate(([0], np.cumsum(count)[:-1])), count)
        p_idx = base + np.arange(count.sum())
        q_parts.append(rep_q)
        p_parts.append(p_idx)
        o_parts.append(np.full(rep_q.shape[0], k, dtype=np.int64))
    if not q_parts:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    q_all = np.concatenate(q_parts)
    p_all = np.concatenate(p_parts)
    o_all = np.concatenate(o_parts)
    order = np.lexsort((p_all, o_all, q_all))
    q_all = q_all[order]
    p_all = p_all[order]
    dist = np.max(np.abs(queries[q_all] - points[p_all]), axis=1)
    keep = dist <= radius
    return q_all[keep], p_all[keep]


def grid_kernel_sums(points, values, cell_ids, offsets, dims, origin, cell, queries,
                     bandwidth, threads=1, chunk=4096):
    """Product-Epanechnikov weighted sums over neighbors for each query."""
    queries = np.ascontiguousarray(queries, dtype=np.float64)
    nq = queries.shape[0]
    k = values.shape[1]
    out = np.zeros((nq, k))
    for lo in range(0, nq, chunk):
        hi = min(nq, lo + chunk)
        qi, pi = grid_pairs(points, cell_ids, offsets, dims, origin, cell,
                            queries[lo:hi], 0.5 * bandwidth)
        if qi.size == 0:
            continue
        u = (queries[lo:hi][qi] - points[pi]) / bandwidth
        w = np.ones(qi.shape[0])
        for j in range(u.shape[1]):
            w = w * (1.5 * (1.0 - 4.0 * u[:, j] * u[:, j]))
        for c in range(k):
            out[lo:hi, c] = np.bincount(qi, weights=w * values[pi, c], minlength=hi - lo)
    return out
