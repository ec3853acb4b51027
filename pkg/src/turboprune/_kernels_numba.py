"""Numba-compiled twins of the kernels in ``_kernels_numpy``.

Straight loop translations; the Gibbs kernel multiplies neighbor factors in
the same left/right/up/down order so results stay bit-identical across
backends.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def gibbs_sweeps(state, trow, tcol, u):
    n_sweeps, k, m = u.shape
    for t in range(n_sweeps):
        for i in range(k):
            for j in range(m):
                w0 = 1.0
                w1 = 1.0
                if j > 0:
                    left = state[i, j - 1]
                    w0 *= trow[left, 0]
                    w1 *= trow[left, 1]
                if j < m - 1:
                    right = state[i, j + 1]
                    w0 *= trow[0, right]
                    w1 *= trow[1, right]
                if i > 0:
                    up = state[i - 1, j]
                    w0 *= tcol[up, 0]
                    w1 *= tcol[up, 1]
                if i < k - 1:
                    down = state[i + 1, j]
                    w0 *= tcol[0, down]
                    w1 *= tcol[1, down]
                state[i, j] = 1 if u[t, i, j] < w1 / (w0 + w1) else 0
    return state


@njit(cache=True)
def gibbs_record(state, trow, tcol, u, burn):
    n_sweeps, k, m = u.shape
    out = np.empty((n_sweeps - burn, k, m), dtype=np.uint8)
    for t in range(n_sweeps):
        gibbs_sweeps(state, trow, tcol, u[t : t + 1])
        if t >= burn:
            out[t - burn] = state
    return out


@njit(cache=True)
def spmp_iterate(unary, frow, fcol, msgs, damping, max_iters, tol, eps):
    k = unary.shape[0]
    m = unary.shape[1]
    new = np.ones((4, k, m, 2))
    iters = 0
    delta = np.inf
    for _ in range(max_iters):
        iters += 1
        # All products below read the previous iteration's messages.
        for i in range(k):
            for j in range(1, m):
                p0 = unary[i, j - 1, 0] * msgs[0, i, j - 1, 0] * msgs[2, i, j - 1, 0] * msgs[3, i, j - 1, 0]
                p1 = unary[i, j - 1, 1] * msgs[0, i, j - 1, 1] * msgs[2, i, j - 1, 1] * msgs[3, i, j - 1, 1]
                new[0, i, j, 0] = frow[0, 0] * p0 + frow[1, 0] * p1
                new[0, i, j, 1] = frow[0, 1] * p0 + frow[1, 1] * p1
        for i in range(k):
            for j in range(m - 1):
                p0 = unary[i, j + 1, 0] * msgs[1, i, j + 1, 0] * msgs[2, i, j + 1, 0] * msgs[3, i, j + 1, 0]
                p1 = unary[i, j + 1, 1] * msgs[1, i, j + 1, 1] * msgs[2, i, j + 1, 1] * msgs[3, i, j + 1, 1]
                new[1, i, j, 0] = frow[0, 0] * p0 + frow[0, 1] * p1
                new[1, i, j, 1] = frow[1, 0] * p0 + frow[1, 1] * p1
        for i in range(1, k):
            for j in range(m):
                p0 = unary[i - 1, j, 0] * msgs[0, i - 1, j, 0] * msgs[1, i - 1, j, 0] * msgs[2, i - 1, j, 0]
                p1 = unary[i - 1, j, 1] * msgs[0, i - 1, j, 1] * msgs[1, i - 1, j, 1] * msgs[2, i - 1, j, 1]
                new[2, i, j, 0] = fcol[0, 0] * p0 + fcol[1, 0] * p1
                new[2, i, j, 1] = fcol[0, 1] * p0 + fcol[1, 1] * p1
        for i in range(k - 1):
            for j in range(m):
                p0 = unary[i + 1, j, 0] * msgs[0, i + 1, j, 0] * msgs[1, i + 1, j, 0] * msgs[3, i + 1, j, 0]
                p1 = unary[i + 1, j, 1] * msgs[0, i + 1, j, 1] * msgs[1, i + 1, j, 1] * msgs[3, i + 1, j, 1]
                new[3, i, j, 0] = fcol[0, 0] * p0 + fcol[0, 1] * p1
                new[3, i, j, 1] = fcol[1, 0] * p0 + fcol[1, 1] * p1
        delta = 0.0
        for d in range(4):
            for i in range(k):
                for j in range(m):
                    if d == 0 and j == 0:
                        continue
                    if d == 1 and j == m - 1:
                        continue
                    if d == 2 and i == 0:
                        continue
                    if d == 3 and i == k - 1:
                        continue
                    n0 = new[d, i, j, 0]
                    n1 = new[d, i, j, 1]
                    p0 = n0 / (n0 + n1)
                    if p0 < eps:
                        p0 = eps
                    elif p0 > 1.0 - eps:
                        p0 = 1.0 - eps
                    b0 = damping * msgs[d, i, j, 0] + (1.0 - damping) * p0
                    b1 = damping * msgs[d, i, j, 1] + (1.0 - damping) * (1.0 - p0)
                    b0 = b0 / (b0 + b1)
                    if b0 < eps:
                        b0 = eps
                    elif b0 > 1.0 - eps:
                        b0 = 1.0 - eps
                    b1 = 1.0 - b0
                    c0 = abs(b0 - msgs[d, i, j, 0])
                    c1 = abs(b1 - msgs[d, i, j, 1])
                    if c0 > delta:
                        delta = c0
                    if c1 > delta:
                        delta = c1
                    msgs[d, i, j, 0] = b0
                    msgs[d, i, j, 1] = b1
        if delta < tol:
            break
    return iters, delta


@njit(cache=True)
def block_spmm(k_rows, meta, payload, offsets, res_r, res_c, res_v, x):
    n = x.shape[1]
    y = np.zeros((k_rows, n))
    for p in range(meta.shape[0]):
        r0 = meta[p, 0]
        c0 = meta[p, 1]
        h = meta[p, 2]
        w = meta[p, 3]
        base = offsets[p]
        for r in range(h):
            for c in range(w):
                v = payload[base + r * w + c]
                for col in range(n):
                    y[r0 + r, col] += v * x[c0 + c, col]
    for e in range(res_r.shape[0]):
        r = res_r[e]
        c = res_c[e]
        v = res_v[e]
        for col in range(n):
            y[r, col] += v * x[c, col]
    return y


@njit(cache=True)
def coo_spmm(rows, cols, vals, x, k_rows):
    y = np.zeros((k_rows, x.shape[1]))
    for e in range(rows.shape[0]):
        r = rows[e]
        c = cols[e]
        v = vals[e]
        for col in range(x.shape[1]):
            y[r, col] += v * x[c, col]
    return y


@njit(cache=True)
def best_rectangle(mask, min_side):
    k, m = mask.shape
    b_area = 0
    b_r0 = 0
    b_c0 = 0
    b_h = 0
    b_w = 0
    col_and = np.empty(m, dtype=np.uint8)
    for r0 in range(k):
        for j in range(m):
            col_and[j] = 1
        for r1 in range(r0, k):
            any_one = False
            for j in range(m):
                col_and[j] = col_and[j] & mask[r1, j]
                if col_and[j]:
                    any_one = True
            if not any_one:
                break
            h = r1 - r0 + 1
            if h < min_side:
                continue
            j = 0
            while j < m:
                if col_and[j]:
                    start = j
                    while j < m and col_and[j]:
                        j += 1
                    w = j - start
                    if w >= min_side:
                        area = h * w
                        if (
                            area > b_area
                            or (area == b_area and r0 < b_r0)
                            or (area == b_area and r0 == b_r0 and start < b_c0)
                            or (area == b_area and r0 == b_r0 and start == b_c0 and w > b_w)
                        ):
                            b_area, b_r0, b_c0, b_h, b_w = area, r0, start, h, w
                else:
                    j += 1
    return b_area, b_r0, b_c0, b_h, b_w
