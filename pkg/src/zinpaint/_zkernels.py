"""Numba kernels behind :mod:`zinpaint.zcurve`.

Everything here works on plain arrays so the kernels can be called with the
GIL released:

* ``coords``  (n, D) uint8, sorted along the z-curve
* ``coords_t`` (D, n) uint8, the same data column-major for leaf scans
* ``keys``    (n,) int64, unique, used as the tie-break
* ``first`` / ``last``  (D,) int64 corners of the active hyper-cube; a cube is
  empty once ``first[d] > last[d]`` for some ``d``
* knn list: max-heap in ``hd`` (distances), ``hk`` (keys), size in ``hs[0]``

L2 distances are squared everywhere.  ``l1`` selects the L1 norm.
"""

import heapq

import numpy as np
from numba import njit, prange

INF = np.int64(1) << np.int64(62)

KNOW_NONE = 0
KNOW_LOWER = 1
KNOW_UPPER = 2

_CHUNK = 64
_SMALL_LEAF = 12


@njit(cache=True, inline="always")
def msb_less(a, b):
    return a < b and a < (a ^ b)


@njit(cache=True)
def morton_less_vec(a, b):
    best = 0
    dim = 0
    for d in range(a.shape[0]):
        x = np.int64(a[d]) ^ np.int64(b[d])
        if msb_less(best, x):
            best = x
            dim = d
    return a[dim] < b[dim]


def spread_table(D):
    """Per-dimension lookup of where each byte's bits land in the z-address.

    Bit ``L`` (0 = most significant) of dimension ``d`` becomes z-bit
    ``L * D + d``; z-bit ``g`` lives in word ``g // 64`` at position
    ``63 - g % 64``.
    """
    W = (8 * D + 63) // 64
    table = np.zeros((D, 256, W), dtype=np.uint64)
    values = np.arange(256)
    for d in range(D):
        for level in range(8):
            g = level * D + d
            on = ((values >> (7 - level)) & 1).astype(bool)
            table[d, on, g // 64] |= np.uint64(1) << np.uint64(63 - g % 64)
    return table


@njit(cache=True, inline="always")
def _zcode(spread, corner, out):
    W = out.shape[0]
    for w in range(W):
        out[w] = 0
    for d in range(corner.shape[0]):
        c = corner[d]
        for w in range(W):
            out[w] |= spread[d, c, w]


@njit(cache=True, inline="always")
def is_empty(first, last):
    for d in range(first.shape[0]):
        if first[d] > last[d]:
            return True
    return False


@njit(cache=True, inline="always")
def find_split(first, last):
    """Return (dim, pos); dim is -1 when the cube is a single point.

    ``dim`` holds the highest differing bit, earlier dimensions winning ties;
    ``pos`` is the largest value of the lower half along ``dim``.
    """
    best = np.int64(0)
    dim = -1
    for d in range(first.shape[0]):
        x = first[d] ^ last[d]
        if msb_less(best, x):
            best = x
            dim = d
    if dim < 0:
        return -1, np.int64(0)
    # smear the top bit downwards: ``low`` covers the split bit and below
    low = best
    low |= low >> 1
    low |= low >> 2
    low |= low >> 4
    return dim, (first[dim] & ~low) | (low >> 1)


@njit(cache=True, inline="always")
def _zset(spread, zv, d, v):
    # replace the bits of dimension d in the code zv by those of v
    for w in range(zv.shape[0]):
        zv[w] = (zv[w] & ~spread[d, 255, w]) | spread[d, v, w]


@njit(cache=True, inline="always")
def _z_less(zw, i, zc):
    for w in range(zc.shape[0]):
        a = zw[i, w]
        b = zc[w]
        if a != b:
            return a < b
    return False


@njit(cache=True, inline="always")
def _z_greater(zw, i, zc):
    for w in range(zc.shape[0]):
        a = zw[i, w]
        b = zc[w]
        if a != b:
            return a > b
    return False


@njit(cache=True, inline="always")
def locate(zw, zf, zl, lo, hi, hint):
    """Entries of ``[lo, hi]`` whose code lies between ``zf`` and ``zl``."""
    if hint == KNOW_LOWER:
        a = lo
    else:
        left = lo
        right = hi + 1
        while left < right:
            mid = (left + right) >> 1
            if _z_less(zw, mid, zf):
                left = mid + 1
            else:
                right = mid
        a = left
    if hint == KNOW_UPPER:
        b = hi
    else:
        left = a
        right = hi + 1
        while left < right:
            mid = (left + right) >> 1
            if _z_greater(zw, mid, zl):
                right = mid
            else:
                left = mid + 1
        b = left - 1
    return a, b


@njit(cache=True, inline="always")
def subinterval(zw, spread, zf, zl, first, last, lo, hi, hint):
    """Entries of ``[lo, hi]`` between the z-addresses of the two corners.

    ``zf`` and ``zl`` are (W,) scratch buffers that receive the corner codes.
    """
    _zcode(spread, first, zf)
    _zcode(spread, last, zl)
    return locate(zw, zf, zl, lo, hi, hint)


@njit(cache=True, inline="always")
def _gap(v, f, g, l1):
    if v < f:
        t = f - v
    elif v > g:
        t = v - g
    else:
        return np.int64(0)
    return t if l1 else t * t


@njit(cache=True, inline="always")
def box_distance(q, first, last, l1):
    acc = np.int64(0)
    for d in range(q.shape[0]):
        acc += _gap(np.int64(q[d]), first[d], last[d], l1)
    return acc


# --- bounded max-heap keyed by (distance, key) ------------------------------

@njit(cache=True, inline="always")
def _gt(d1, k1, d2, k2):
    return d1 > d2 or (d1 == d2 and k1 > k2)


@njit(cache=True, inline="always")
def heap_push(hd, hk, hs, dist, key):
    """Insert (dist, key); evict the largest entry on overflow.

    Returns True if the entry was kept.
    """
    cap = hd.shape[0]
    n = hs[0]
    if n < cap:
        i = n
        hs[0] = n + 1
        while i > 0:
            p = (i - 1) >> 1
            if _gt(dist, key, hd[p], hk[p]):
                hd[i] = hd[p]
                hk[i] = hk[p]
                i = p
            else:
                break
        hd[i] = dist
        hk[i] = key
        return True
    if not _gt(hd[0], hk[0], dist, key):
        return False
    i = 0
    while True:
        c = 2 * i + 1
        if c >= cap:
            break
        if c + 1 < cap and _gt(hd[c + 1], hk[c + 1], hd[c], hk[c]):
            c += 1
        if _gt(hd[c], hk[c], dist, key):
            hd[i] = hd[c]
            hk[i] = hk[c]
            i = c
        else:
            break
    hd[i] = dist
    hk[i] = key
    return True


@njit(cache=True, inline="always")
def kth(hd, hs):
    if hs[0] < hd.shape[0]:
        return INF
    return hd[0]


@njit(cache=True, inline="always")
def crop_radius(bound, l1):
    if bound >= INF:
        return INF
    if l1:
        return bound
    r = np.int64(np.sqrt(np.float64(bound)))
    while r * r > bound:
        r -= 1
    while r * r < bound:
        r += 1
    return r


@njit(cache=True, inline="always")
def crop(first, last, q, hd, hs, l1):
    r = crop_radius(kth(hd, hs), l1)
    if r >= INF:
        return
    for d in range(q.shape[0]):
        lo = np.int64(q[d]) - r
        hi = np.int64(q[d]) + r
        if lo > first[d]:
            first[d] = lo
        if hi < last[d]:
            last[d] = hi


@njit(cache=True, inline="always")
def leaf_scan(coords, coords_t, keys, q, lo, hi, l1, hd, hk, hs, first, last, acc):
    """Scan entries ``lo..hi`` into the knn list; crop the cube on improvement.

    ``acc`` is an int32 scratch buffer of length ``_CHUNK``.
    """
    improved = False
    D = coords.shape[1]
    bound = kth(hd, hs)
    if hi - lo + 1 <= _SMALL_LEAF:
        for i in range(lo, hi + 1):
            total = np.int64(0)
            for d in range(D):
                t = np.int64(coords[i, d]) - np.int64(q[d])
                total += (t if t >= 0 else -t) if l1 else t * t
                if total > bound:
                    break
            if total <= bound and heap_push(hd, hk, hs, total, keys[i]):
                improved = True
                bound = kth(hd, hs)
    else:
        for start in range(lo, hi + 1, _CHUNK):
            m = min(_CHUNK, hi + 1 - start)
            # slices keep the inner loops free of negative-index checks so
            # they vectorise
            a = acc[:m]
            a[:] = 0
            for d in range(D):
                qd = np.int32(q[d])
                seg = coords_t[d, start:start + m]
                if l1:
                    for j in range(m):
                        a[j] += abs(np.int32(seg[j]) - qd)
                else:
                    for j in range(m):
                        t = np.int32(seg[j]) - qd
                        a[j] += t * t
            for j in range(m):
                if a[j] <= bound and heap_push(hd, hk, hs, np.int64(a[j]), keys[start + j]):
                    improved = True
                    bound = kth(hd, hs)
    if improved:
        crop(first, last, q, hd, hs, l1)
    return improved


# frame layout for the explicit traversal stack
_DIM, _POS, _F0, _L0, _LO, _HI, _FAR, _LEFT, _PHASE, _IMP = range(10)


@njit(cache=True)
def search(coords, coords_t, zw, spread, keys, q, first, last, lo, hi, dist, mu, l1, hd, hk, hs):
    """Outside-in traversal of the cube ``first..last`` over ``[lo, hi]``.

    ``dist`` is the distance from ``q`` to the cube.  The cube is mutated in
    place: cropped whenever the knn list improves, restored otherwise.  Each
    stack frame keeps only the split and the two bytes it overwrote.  The
    z-addresses of both corners follow the cube; after an improvement they
    are stale and get recomputed before the next subinterval.
    """
    D = coords.shape[1]
    stack = np.empty((8 * D + 2, 10), np.int64)
    zf = np.empty(zw.shape[1], np.uint64)
    zl = np.empty(zw.shape[1], np.uint64)
    acc = np.empty(_CHUNK, np.int32)
    _zcode(spread, first, zf)
    _zcode(spread, last, zl)
    sp = 0
    calling = True
    ret = False
    while True:
        if calling:
            calling = False
            ret = False
            if hi >= lo:
                dim = -1
                if hi - lo + 1 > mu:
                    dim, pos = find_split(first, last)
                if dim < 0 and hi == lo:
                    # single entries dominate at small mu; skip the scan setup
                    total = np.int64(0)
                    for d in range(D):
                        t = np.int64(coords[lo, d]) - np.int64(q[d])
                        total += (t if t >= 0 else -t) if l1 else t * t
                    if total <= kth(hd, hs) and heap_push(hd, hk, hs, total, keys[lo]):
                        ret = True
                        crop(first, last, q, hd, hs, l1)
                elif dim < 0:
                    ret = leaf_scan(coords, coords_t, keys, q, lo, hi, l1, hd, hk, hs, first, last, acc)
                else:
                    f0 = first[dim]
                    l0 = last[dim]
                    v = np.int64(q[dim])
                    base = dist - _gap(v, f0, l0, l1)
                    left_dist = base + _gap(v, f0, pos, l1)
                    right_dist = base + _gap(v, pos + 1, l0, l1)
                    left_first = right_dist >= left_dist
                    if left_first:
                        last[dim] = pos
                        _zset(spread, zl, dim, pos)
                        a, b = locate(zw, zf, zl, lo, hi, KNOW_LOWER)
                        near = left_dist
                        far = right_dist
                    else:
                        first[dim] = pos + 1
                        _zset(spread, zf, dim, pos + 1)
                        a, b = locate(zw, zf, zl, lo, hi, KNOW_UPPER)
                        near = right_dist
                        far = left_dist
                    stack[sp, _DIM] = dim
                    stack[sp, _POS] = pos
                    stack[sp, _F0] = f0
                    stack[sp, _L0] = l0
                    # the far child sorts entirely after (or before) the near one,
                    # so its entries lie beyond the near interval
                    stack[sp, _LO] = b + 1 if left_first else lo
                    stack[sp, _HI] = hi if left_first else a - 1
                    stack[sp, _FAR] = far
                    stack[sp, _LEFT] = left_first
                    stack[sp, _PHASE] = 1
                    stack[sp, _IMP] = 0
                    sp += 1
                    lo = a
                    hi = b
                    dist = near
                    calling = True
                    continue
        if sp == 0:
            return ret
        dim = stack[sp - 1, _DIM]
        pos = stack[sp - 1, _POS]
        if stack[sp - 1, _PHASE] == 1:
            improved = ret
            left_first = stack[sp - 1, _LEFT] != 0
            if left_first:
                last[dim] = stack[sp - 1, _L0]
            else:
                first[dim] = stack[sp - 1, _F0]
            far = stack[sp - 1, _FAR]
            if improved:
                crop(first, last, q, hd, hs, l1)
            if left_first:
                if first[dim] < pos + 1:
                    first[dim] = pos + 1
            elif last[dim] > pos:
                last[dim] = pos
            if improved:
                far = INF if is_empty(first, last) else box_distance(q, first, last, l1)
            stack[sp - 1, _IMP] = improved
            if far <= kth(hd, hs):
                if improved:
                    # codes are stale exactly when the subtree improved
                    hint = KNOW_NONE
                    _zcode(spread, first, zf)
                    _zcode(spread, last, zl)
                elif left_first:
                    hint = KNOW_UPPER
                    _zset(spread, zl, dim, last[dim])
                    _zset(spread, zf, dim, first[dim])
                else:
                    hint = KNOW_LOWER
                    _zset(spread, zf, dim, first[dim])
                    _zset(spread, zl, dim, last[dim])
                a, b = locate(zw, zf, zl, stack[sp - 1, _LO], stack[sp - 1, _HI], hint)
                if b >= a:
                    stack[sp - 1, _PHASE] = 2
                    lo = a
                    hi = b
                    dist = far
                    calling = True
                    continue
            ret = False
        improved = stack[sp - 1, _IMP] != 0 or ret
        first[dim] = stack[sp - 1, _F0]
        last[dim] = stack[sp - 1, _L0]
        if improved:
            # the parent frame crops again before it looks at the cube
            if sp == 1:
                crop(first, last, q, hd, hs, l1)
        else:
            _zset(spread, zf, dim, first[dim])
            _zset(spread, zl, dim, last[dim])
        sp -= 1
        ret = improved


@njit(cache=True, nogil=True)
def knn_sequential(coords, coords_t, zw, spread, keys, q, k, mu, l1):
    hd = np.empty(k, np.int64)
    hk = np.empty(k, np.int64)
    hs = np.zeros(1, np.int64)
    n = coords.shape[0]
    D = coords.shape[1]
    first = np.zeros(D, np.int64)
    last = np.full(D, 255, np.int64)
    search(coords, coords_t, zw, spread, keys, q, first, last, 0, n - 1,
           box_distance(q, first, last, l1), mu, l1, hd, hk, hs)
    return hd, hk, hs[0]


# --- prioritized parallel traversal ------------------------------------------

@njit(cache=True)
def _grow(a, n):
    if n < a.shape[0]:
        return a
    out = np.empty((2 * a.shape[0],) + a.shape[1:], a.dtype)
    out[: a.shape[0]] = a
    return out


@njit(cache=True)
def _merge(hd, hk, hs, bd, bk, n):
    k = hd.shape[0]
    for i in range(n):
        key = bk[i]
        # cannot enter a full list: skip the duplicate scan
        if hs[0] == k and (bd[i] > hd[0] or (bd[i] == hd[0] and key >= hk[0])):
            continue
        seen = False
        for j in range(hs[0]):
            if hk[j] == key:
                seen = True
                break
        if not seen:
            heap_push(hd, hk, hs, bd[i], key)


@njit(cache=True)
def _search_job(coords, coords_t, zw, spread, keys, q, mu, l1, first, last, lo, hi, hd, hk, hs):
    crop(first, last, q, hd, hs, l1)
    if is_empty(first, last):
        return
    dist = box_distance(q, first, last, l1)
    if dist > kth(hd, hs):
        return
    if hs[0] == hd.shape[0]:
        zf = np.empty(zw.shape[1], np.uint64)
        zl = np.empty(zw.shape[1], np.uint64)
        lo, hi = subinterval(zw, spread, zf, zl, first, last, lo, hi, KNOW_NONE)
    search(coords, coords_t, zw, spread, keys, q, first, last, lo, hi, dist, mu, l1, hd, hk, hs)


@njit(cache=True)
def _run_job(coords, coords_t, zw, spread, keys, q, mu, l1, first, last, lo, hi, hd, hk, hs, bd, bk, bs):
    # read phase: copy the shared list, then search privately
    for i in range(hs[0]):
        bd[i] = hd[i]
        bk[i] = hk[i]
    bs[0] = hs[0]
    _search_job(coords, coords_t, zw, spread, keys, q, mu, l1, first, last, lo, hi, bd, bk, bs)


@njit(cache=True, parallel=True)
def _run_batch_threads(coords, coords_t, zw, spread, keys, q, mu, l1, jf, jl, jlo, jhi, batch, nb,
                       hd, hk, hs, bd, bk, bs):
    for b in prange(nb):
        j = batch[b]
        _run_job(coords, coords_t, zw, spread, keys, q, mu, l1, jf[j].copy(), jl[j].copy(), jlo[j], jhi[j],
                 hd, hk, hs, bd[b], bk[b], bs[b])
    for b in range(nb):
        _merge(hd, hk, hs, bd[b], bk[b], bs[b, 0])


@njit(cache=True)
def knn_prioritized(coords, coords_t, zw, spread, keys, q, k, mu, nu, l1, workers, threaded):
    """Best-first job scheduling over sub-regions.

    Regions whose interval holds at least ``nu`` entries are split into two
    jobs; smaller ones are searched as a unit.  Up to ``workers`` units are
    taken from the queue closest-first.  With ``threaded`` they run
    concurrently against a snapshot of the shared list and are merged
    afterwards; otherwise they run one after another on the shared list.
    """
    n = coords.shape[0]
    D = coords.shape[1]
    hd = np.empty(k, np.int64)
    hk = np.empty(k, np.int64)
    hs = np.zeros(1, np.int64)
    cap = 64
    jf = np.empty((cap, D), np.int64)
    jl = np.empty((cap, D), np.int64)
    jlo = np.empty(cap, np.int64)
    jhi = np.empty(cap, np.int64)
    jf[0, :] = 0
    jl[0, :] = 255
    jlo[0] = 0
    jhi[0] = n - 1
    njobs = 1
    zf = np.empty(zw.shape[1], np.uint64)
    zl = np.empty(zw.shape[1], np.uint64)
    queue = [(box_distance(q, jf[0], jl[0], l1), np.int64(0))]
    batch = np.empty(workers, np.int64)
    bd = np.empty((workers, k), np.int64)
    bk = np.empty((workers, k), np.int64)
    bs = np.zeros((workers, 1), np.int64)
    while len(queue) > 0:
        nb = 0
        while len(queue) > 0 and nb < workers:
            dist, j = heapq.heappop(queue)
            if dist > kth(hd, hs):
                continue
            size = jhi[j] - jlo[j] + 1
            dim, pos = find_split(jf[j], jl[j])
            if size < nu or size <= mu or dim < 0:
                batch[nb] = j
                nb += 1
                continue
            for side in range(2):
                jf = _grow(jf, njobs)
                jl = _grow(jl, njobs)
                jlo = _grow(jlo, njobs)
                jhi = _grow(jhi, njobs)
                c = njobs
                jf[c] = jf[j]
                jl[c] = jl[j]
                if side == 0:
                    jl[c, dim] = pos
                    hint = KNOW_LOWER
                else:
                    jf[c, dim] = pos + 1
                    hint = KNOW_UPPER
                a, b = subinterval(zw, spread, zf, zl, jf[c], jl[c], jlo[j], jhi[j], hint)
                if b < a:
                    continue
                jlo[c] = a
                jhi[c] = b
                njobs += 1
                heapq.heappush(queue, (box_distance(q, jf[c], jl[c], l1), np.int64(c)))
        if nb == 0:
            continue
        if threaded:
            _run_batch_threads(coords, coords_t, zw, spread, keys, q, mu, l1, jf, jl, jlo, jhi, batch, nb,
                               hd, hk, hs, bd, bk, bs)
        else:
            # one after another: each job reads and writes the shared list directly
            for b in range(nb):
                j = batch[b]
                _search_job(coords, coords_t, zw, spread, keys, q, mu, l1, jf[j].copy(), jl[j].copy(),
                            jlo[j], jhi[j], hd, hk, hs)
    return hd, hk, hs[0]


@njit(cache=True)
def sorted_heap(hd, hk, n):
    order = np.argsort(hk[:n], kind="mergesort")
    d = hd[:n][order]
    key = hk[:n][order]
    order = np.argsort(d, kind="mergesort")
    return d[order], key[order]


@njit(cache=True)
def knn_many(coords, coords_t, zw, spread, keys, queries, k, mu, nu, l1, workers, threaded):
    """Run one knn search per row of ``queries``; rows are (distance, key) sorted.

    Unused slots (index smaller than k) hold ``INF`` / -1.
    """
    m = queries.shape[0]
    dist = np.full((m, k), INF, np.int64)
    key = np.full((m, k), -1, np.int64)
    count = np.zeros(m, np.int64)
    for i in range(m):
        if workers <= 1:
            hd, hk, n = knn_sequential(coords, coords_t, zw, spread, keys, queries[i], k, mu, l1)
        else:
            hd, hk, n = knn_prioritized(coords, coords_t, zw, spread, keys, queries[i], k, mu, nu, l1,
                                        workers, threaded)
        d, kk = sorted_heap(hd, hk, n)
        dist[i, :n] = d
        key[i, :n] = kk
        count[i] = n
    return dist, key, count
