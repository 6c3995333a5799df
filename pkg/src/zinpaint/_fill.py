"""Numba kernels for the fill loop.

State arrays, all (H, W) unless noted:

* ``img``    (H, W, C) uint8 working image
* ``known``  bool
* ``conf``   float64 confidence
* ``gray``   float64 channel mean, valid on known pixels
* ``gx, gy`` float64 intensity differences, ``gm`` their squared magnitude
  (-1 on unknown pixels)
* ``front``  bool fill front
* ``prio``   float64 priority, -1 off the front
* ``rowmax`` / ``rowarg`` (H,) best priority per row and its first column
"""

import numpy as np
from numba import njit

EPS = 1e-3


@njit(cache=True)
def _gray_at(img, r, c):
    s = 0.0
    for ch in range(img.shape[2]):
        s += img[r, c, ch]
    return s / img.shape[2]


@njit(cache=True)
def _grad_at(gray, known, r, c):
    H, W = known.shape
    gx = 0.0
    gy = 0.0
    # central differences I[+1] - I[-1]; a side that is unknown or outside
    # the image zeroes that component
    if c > 0 and c < W - 1 and known[r, c - 1] and known[r, c + 1]:
        gx = gray[r, c + 1] - gray[r, c - 1]
    if r > 0 and r < H - 1 and known[r - 1, c] and known[r + 1, c]:
        gy = gray[r + 1, c] - gray[r - 1, c]
    return gx, gy


@njit(cache=True)
def refresh_gradients(gray, known, gx, gy, gm, r0, r1, c0, c1):
    H, W = known.shape
    for r in range(max(r0, 0), min(r1, H - 1) + 1):
        for c in range(max(c0, 0), min(c1, W - 1) + 1):
            if known[r, c]:
                a, b = _grad_at(gray, known, r, c)
                gx[r, c] = a
                gy[r, c] = b
                gm[r, c] = a * a + b * b
            else:
                gx[r, c] = 0.0
                gy[r, c] = 0.0
                gm[r, c] = -1.0


@njit(cache=True)
def _is_front(known, r, c):
    if not known[r, c]:
        return False
    H, W = known.shape
    if r > 0 and not known[r - 1, c]:
        return True
    if r < H - 1 and not known[r + 1, c]:
        return True
    if c > 0 and not known[r, c - 1]:
        return True
    if c < W - 1 and not known[r, c + 1]:
        return True
    return False


@njit(cache=True)
def _mask_at(known, r, c, r_ref, c_ref):
    # outside the image counts like the reference pixel
    H, W = known.shape
    if r < 0 or r >= H or c < 0 or c >= W:
        return 1.0 if known[r_ref, c_ref] else 0.0
    return 1.0 if known[r, c] else 0.0


@njit(cache=True)
def clamp_origin(r, c, K, H, W):
    h = (K - 1) // 2
    rr = min(max(r, h), H - 1 - h)
    cc = min(max(c, h), W - 1 - h)
    return rr - h, cc - h


@njit(cache=True)
def confidence_term(known, conf, r0, c0, K):
    s = 0.0
    for i in range(K):
        for j in range(K):
            if known[r0 + i, c0 + j]:
                s += conf[r0 + i, c0 + j]
    return s / (K * K)


@njit(cache=True)
def data_term(known, gx, gy, gm, r, c, r0, c0, K):
    # strongest known gradient in the window
    best = -1.0
    bx = 0.0
    by = 0.0
    for i in range(K):
        for j in range(K):
            m = gm[r0 + i, c0 + j]
            if m > best:
                best = m
                bx = gx[r0 + i, c0 + j]
                by = gy[r0 + i, c0 + j]
    nx = _mask_at(known, r, c + 1, r, c) - _mask_at(known, r, c - 1, r, c)
    ny = _mask_at(known, r + 1, c, r, c) - _mask_at(known, r - 1, c, r, c)
    norm = np.sqrt(nx * nx + ny * ny)
    if norm == 0.0 or best < 0.0:
        return EPS
    nx /= norm
    ny /= norm
    # isophote = gradient rotated by 90 degrees
    return abs(-by * nx + bx * ny) / 255.0 + EPS


@njit(cache=True)
def priority_at(known, conf, gx, gy, gm, r, c, K):
    H, W = known.shape
    r0, c0 = clamp_origin(r, c, K, H, W)
    return confidence_term(known, conf, r0, c0, K) * data_term(known, gx, gy, gm, r, c, r0, c0, K)


@njit(cache=True)
def refresh_priorities(known, conf, gx, gy, gm, front, prio, r0, r1, c0, c1, K):
    H, W = known.shape
    for r in range(max(r0, 0), min(r1, H - 1) + 1):
        for c in range(max(c0, 0), min(c1, W - 1) + 1):
            f = _is_front(known, r, c)
            front[r, c] = f
            prio[r, c] = priority_at(known, conf, gx, gy, gm, r, c, K) if f else -1.0


@njit(cache=True)
def refresh_rowmax(prio, rowmax, rowarg, r0, r1):
    H, W = prio.shape
    for r in range(max(r0, 0), min(r1, H - 1) + 1):
        best = -1.0
        arg = -1
        for c in range(W):
            if prio[r, c] > best:
                best = prio[r, c]
                arg = c
        rowmax[r] = best
        rowarg[r] = arg


@njit(cache=True)
def best_target(rowmax, rowarg):
    """First maximum in row-major order; (-1, -1) when the front is empty."""
    best = -1.0
    row = -1
    for r in range(rowmax.shape[0]):
        if rowmax[r] > best:
            best = rowmax[r]
            row = r
    if row < 0:
        return -1, -1
    return row, rowarg[row]


@njit(cache=True)
def init_state(img, known, conf, gray, gx, gy, gm, front, prio, rowmax, rowarg, K):
    H, W = known.shape
    for r in range(H):
        for c in range(W):
            gray[r, c] = _gray_at(img, r, c) if known[r, c] else 0.0
    refresh_gradients(gray, known, gx, gy, gm, 0, H - 1, 0, W - 1)
    refresh_priorities(known, conf, gx, gy, gm, front, prio, 0, H - 1, 0, W - 1, K)
    refresh_rowmax(prio, rowmax, rowarg, 0, H - 1)


@njit(cache=True)
def paste(img, flat, known, conf, gray, tr, tc, sy, sx, K, value):
    """Copy the source window at (sy, sx) into unknown pixels of the target at (tr, tc).

    ``flat`` is the int32 mirror of ``img`` and is kept in step.
    """
    W = img.shape[1]
    C = img.shape[2]
    filled = 0
    for i in range(K):
        for j in range(K):
            r = tr + i
            c = tc + j
            if not known[r, c]:
                for ch in range(C):
                    img[r, c, ch] = img[sy + i, sx + j, ch]
                    flat[(r * W + c) * C + ch] = img[r, c, ch]
                known[r, c] = True
                conf[r, c] = value
                gray[r, c] = _gray_at(img, r, c)
                filled += 1
    return filled


@njit(cache=True)
def after_paste(img, known, conf, gray, gx, gy, gm, front, prio, rowmax, rowarg, tr, tc, K):
    h = (K - 1) // 2
    refresh_gradients(gray, known, gx, gy, gm, tr - 1, tr + K, tc - 1, tc + K)
    # any pixel whose (clamped) window or 4-neighbourhood touches the changed
    # block needs a new priority
    reach = 2 * h + 2
    refresh_priorities(known, conf, gx, gy, gm, front, prio,
                       tr - reach, tr + K - 1 + reach, tc - reach, tc + K - 1 + reach, K)
    refresh_rowmax(prio, rowmax, rowarg, tr - reach, tr + K - 1 + reach)


# --- patch costs ----------------------------------------------------------------

@njit(cache=True)
def target_rows(img, known, tr, tc, K):
    """Target values and a 0/1 weight per (row, col * C + ch)."""
    C = img.shape[2]
    tv = np.zeros((K, K * C), np.int32)
    tw = np.zeros((K, K * C), np.int32)
    for i in range(K):
        for j in range(K):
            if known[tr + i, tc + j]:
                for ch in range(C):
                    tv[i, j * C + ch] = img[tr + i, tc + j, ch]
                    tw[i, j * C + ch] = 1
    return tv, tw


@njit(cache=True)
def _cost(flat, W, C, key, tv, tw, l1):
    K = tv.shape[0]
    L = tv.shape[1]
    sy = key // W
    sx = key - sy * W
    total = np.int64(0)
    for i in range(K):
        base = ((sy + i) * W + sx) * C
        row = flat[base:base + L]
        t_row = tv[i]
        w_row = tw[i]
        acc = np.int32(0)
        if l1:
            for j in range(L):
                acc += w_row[j] * abs(row[j] - t_row[j])
        else:
            for j in range(L):
                t = row[j] - t_row[j]
                acc += w_row[j] * t * t
        total += acc
    return total


@njit(cache=True)
def best_of(flat, W, C, keys, tv, tw, l1):
    """Smallest (cost, key) over ``keys``; returns (key, cost).

    ``flat`` is the image as a flat int32 array.
    """
    best = np.int64(-1)
    best_key = np.int64(-1)
    for n in range(keys.shape[0]):
        key = keys[n]
        cost = _cost(flat, W, C, key, tv, tw, l1)
        if best < 0 or cost < best or (cost == best and key < best_key):
            best = cost
            best_key = key
    return best_key, best


@njit(cache=True)
def costs_of(flat, W, C, keys, tv, tw, l1):
    out = np.empty(keys.shape[0], np.int64)
    for n in range(keys.shape[0]):
        out[n] = _cost(flat, W, C, keys[n], tv, tw, l1)
    return out
