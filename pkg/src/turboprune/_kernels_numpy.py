"""Pure-numpy implementations of the hot kernels.

These are the fallback twins of ``_kernels_numba``; the two modules expose
the same functions with identical semantics. Selection happens in ``_accel``
via the ``TURBOPRUNE_BACKEND`` environment variable.
"""

import numpy as np


def gibbs_sweeps(state, trow, tcol, u):
    """Raster-scan Gibbs updates of a binary grid, in place.

    ``u`` holds pre-drawn uniforms of shape (sweeps, K, M); consuming them in
    raster order keeps the result bit-identical across backends.
    """
    n_sweeps, k, m = u.shape
    for t in range(n_sweeps):
        ut = u[t]
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
                state[i, j] = 1 if ut[i, j] < w1 / (w0 + w1) else 0
    return state


def gibbs_record(state, trow, tcol, u, burn):
    """Run Gibbs sweeps and record the grid after every post-burn-in sweep."""
    n_sweeps, k, m = u.shape
    out = np.empty((n_sweeps - burn, k, m), dtype=np.uint8)
    for t in range(n_sweeps):
        gibbs_sweeps(state, trow, tcol, u[t : t + 1])
        if t >= burn:
            out[t - burn] = state
    return out


def _norm_clamp(msg, eps):
    s = msg[..., 0] + msg[..., 1]
    p0 = np.clip(msg[..., 0] / s, eps, 1.0 - eps)
    out = np.empty_like(msg)
    out[..., 0] = p0
    out[..., 1] = 1.0 - p0
    return out


def spmp_iterate(unary, frow, fcol, msgs, damping, max_iters, tol, eps):
    """Synchronous flooding sum-product sweeps on a 2-state grid, in place.

    ``msgs`` has shape (4, K, M, 2): factor-to-variable messages arriving from
    the left / right / up / down pairwise factor of each site. Entries without
    a corresponding edge stay at the neutral value 1. Returns (iterations,
    last max-absolute-change).
    """
    k, m = unary.shape[:2]
    ml, mr, mu, md = msgs[0], msgs[1], msgs[2], msgs[3]
    iters = 0
    delta = np.inf
    for _ in range(max_iters):
        iters += 1
        ex_l = unary * mr * mu * md
        ex_r = unary * ml * mu * md
        ex_u = unary * ml * mr * md
        ex_d = unary * ml * mr * mu
        delta = 0.0
        if m > 1:
            new = _norm_clamp(ex_r[:, :-1] @ frow, eps)
            new = _norm_clamp(damping * ml[:, 1:] + (1.0 - damping) * new, eps)
            delta = max(delta, float(np.max(np.abs(new - ml[:, 1:]))))
            ml[:, 1:] = new

            new = _norm_clamp(ex_l[:, 1:] @ frow.T, eps)
            new = _norm_clamp(damping * mr[:, :-1] + (1.0 - damping) * new, eps)
            delta = max(delta, float(np.max(np.abs(new - mr[:, :-1]))))
            mr[:, :-1] = new
        if k > 1:
            new = _norm_clamp(ex_d[:-1, :] @ fcol, eps)
            new = _norm_clamp(damping * mu[1:, :] + (1.0 - damping) * new, eps)
            delta = max(delta, float(np.max(np.abs(new - mu[1:, :]))))
            mu[1:, :] = new

            new = _norm_clamp(ex_u[1:, :] @ fcol.T, eps)
            new = _norm_clamp(damping * md[:-1, :] + (1.0 - damping) * new, eps)
            delta = max(delta, float(np.max(np.abs(new - md[:-1, :]))))
            md[:-1, :] = new
        if delta < tol:
            break
    return iters, delta


def block_spmm(k_rows, meta, payload, offsets, res_r, res_c, res_v, x):
    """Multiply a block-sparse matrix by a dense one, touching only stored data.

    ``meta`` is (P, 4) int64 rows of (r0, c0, h, w); ``payload`` the
    concatenated row-major block entries with ``offsets`` (P+1,) prefix sums;
    the ``res_*`` arrays are leftover coordinate entries.
    """
    n = x.shape[1]
    y = np.zeros((k_rows, n))
    for p in range(meta.shape[0]):
        r0, c0, h, w = meta[p]
        blk = payload[offsets[p] : offsets[p + 1]].reshape(h, w)
        y[r0 : r0 + h] += blk @ x[c0 : c0 + w]
    if res_r.shape[0]:
        np.add.at(y, res_r, res_v[:, None] * x[res_c])
    return y


def coo_spmm(rows, cols, vals, x, k_rows):
    """Coordinate-format multiply: one multiply-add per stored entry per column."""
    y = np.zeros((k_rows, x.shape[1]))
    if rows.shape[0]:
        np.add.at(y, rows, vals[:, None] * x[cols])
    return y


def best_rectangle(mask, min_side):
    """Largest all-ones rectangle with both sides >= min_side.

    Returns (area, r0, c0, h, w); area 0 when no admissible rectangle exists.
    Ties break to larger area, then topmost, then leftmost, then wider.
    """
    k, m = mask.shape
    b_area = 0
    b_r0 = 0
    b_c0 = 0
    b_h = 0
    b_w = 0
    for r0 in range(k):
        col_and = np.ones(m, dtype=bool)
        for r1 in range(r0, k):
            col_and &= mask[r1].astype(bool)
            if not col_and.any():
                break
            h = r1 - r0 + 1
            if h < min_side:
                continue
            edges = np.flatnonzero(np.diff(np.concatenate(([0], col_and.view(np.int8), [0]))))
            for s, e in zip(edges[::2], edges[1::2]):
                w = int(e - s)
                if w < min_side:
                    continue
                area = h * w
                if (
                    area > b_area
                    or (area == b_area and r0 < b_r0)
                    or (area == b_area and r0 == b_r0 and s < b_c0)
                    or (area == b_area and r0 == b_r0 and s == b_c0 and w > b_w)
                ):
                    b_area, b_r0, b_c0, b_h, b_w = area, r0, int(s), h, w
    return b_area, b_r0, b_c0, b_h, b_w
