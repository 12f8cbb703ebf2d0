"""Label-setting shortest-path solver on the lifted (x, y, theta) grid.

The stencil couples the spatial 8-neighborhood with one orientation step in
either direction (all 26 nonzero offsets of a 3x3x3 block, theta periodic).
An edge's weight is the average of the metric speed of its displacement
evaluated at both endpoints, and in asymmetric mode an edge is dropped
entirely when the spatial displacement runs against either endpoint's
orientation vector.  Predecessors and the acceptance order are recorded so
paths can be walked back without re-solving.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _heap_push(heap_d, heap_i, heap_n, val, idx):
    heap_d[heap_n] = val
    heap_i[heap_n] = idx
    i = heap_n
    while i > 0:
        parent = (i - 1) >> 1
        if heap_d[parent] <= heap_d[i]:
            break
        heap_d[parent], heap_d[i] = heap_d[i], heap_d[parent]
        heap_i[parent], heap_i[i] = heap_i[i], heap_i[parent]
        i = parent
    return heap_n + 1


@njit(cache=True)
def _heap_pop(heap_d, heap_i, heap_n):
    val = heap_d[0]
    idx = heap_i[0]
    heap_n -= 1
    heap_d[0] = heap_d[heap_n]
    heap_i[0] = heap_i[heap_n]
    i = 0
    while True:
        left = 2 * i + 1
        if left >= heap_n:
            break
        small = left
        right = left + 1
        if right < heap_n and heap_d[right] < heap_d[left]:
            small = right
        if heap_d[i] <= heap_d[small]:
            break
        heap_d[i], heap_d[small] = heap_d[small], heap_d[i]
        heap_i[i], heap_i[small] = heap_i[small], heap_i[i]
        i = small
    return val, idx, heap_n


@njit(cache=True)
def _speed(c, vx, vy, vt, nx, ny, xi, zeta, lam, chi, symmetric):
    fwd = vx * nx + vy * ny
    if not symmetric and fwd < 0.0:
        return np.inf
    sq = vx * vx + vy * vy
    side2 = sq - fwd * fwd
    if side2 < 0.0:
        side2 = 0.0
    base = fwd * fwd + side2 / (zeta * zeta) + vt * vt
    if lam > 0.0:
        base += lam * chi * (sq + vt * vt)
    return c * xi * np.sqrt(base)


@njit(cache=True)
def _chi_at(hess, hmax2, idx, ux, uy, ut):
    m2 = hmax2[idx]
    if m2 <= 1e-300:
        return 0.0
    h = hess[idx]
    r0 = h[0, 0] * ux + h[0, 1] * uy + h[0, 2] * ut
    r1 = h[1, 0] * ux + h[1, 1] * uy + h[1, 2] * ut
    r2 = h[2, 0] * ux + h[2, 1] * uy + h[2, 2] * ut
    val = (r0 * r0 + r1 * r1 + r2 * r2) / m2
    return val if val < 1.0 else 1.0


@njit(cache=True)
def _march(cost, xi, zeta, lam, vt_step, symmetric,
           hess, hmax2, use_hess, seeds, targets, cos_t, sin_t):
    n_or, h, w = cost.shape
    plane = h * w
    size = n_or * plane
    dist = np.full(size, np.inf)
    done = np.zeros(size, np.uint8)
    pred = np.full(size, -1, np.int32)
    order = np.empty(size, np.int32)
    n_done = 0

    is_target = np.zeros(size, np.uint8)
    remaining = 0
    for t in targets:
        if not is_target[t]:
            is_target[t] = 1
            remaining += 1

    cap = 65536 if size > 65536 else 2 * size + 64  # grows by doubling when needed
    heap_d = np.empty(cap, np.float64)
    heap_i = np.empty(cap, np.int32)
    heap_n = 0
    for s in seeds:
        if dist[s] > 0.0:
            dist[s] = 0.0
            heap_n = _heap_push(heap_d, heap_i, heap_n, 0.0, s)

    cflat = cost.ravel()
    while heap_n > 0:
        val, idx, heap_n = _heap_pop(heap_d, heap_i, heap_n)
        if done[idx]:
            continue
        done[idx] = 1
        order[n_done] = idx
        n_done += 1
        if is_target[idx]:
            remaining -= 1
            if remaining == 0:
                break
        j = idx // plane
        rem = idx % plane
        y = rem // w
        x = rem % w
        c_src = cflat[idx]
        nx_src = cos_t[j]
        ny_src = sin_t[j]
        for dj in range(-1, 2):
            nj = (j + dj) % n_or
            vt = dj * vt_step
            for dy in range(-1, 2):
                yy = y + dy
                if yy < 0 or yy >= h:
                    continue
                for dx in range(-1, 2):
                    if dj == 0 and dy == 0 and dx == 0:
                        continue
                    xx = x + dx
                    if xx < 0 or xx >= w:
                        continue
                    nidx = (nj * h + yy) * w + xx
                    if done[nidx]:
                        continue
                    chi1 = 0.0
                    chi2 = 0.0
                    if use_hess:
                        norm = np.sqrt(dx * dx + dy * dy + vt * vt)
                        ux = dx / norm
                        uy = dy / norm
                        ut = vt / norm
                        chi1 = _chi_at(hess, hmax2, idx, ux, uy, ut)
                        chi2 = _chi_at(hess, hmax2, nidx, ux, uy, ut)
                    s1 = _speed(c_src, dx, dy, vt, nx_src, ny_src,
                                xi, zeta, lam, chi1, symmetric)
                    if s1 == np.inf:
                        continue
                    s2 = _speed(cflat[nidx], dx, dy, vt, cos_t[nj], sin_t[nj],
                                xi, zeta, lam, chi2, symmetric)
                    if s2 == np.inf:
                        continue
                    cand = val + 0.5 * (s1 + s2)
                    if cand < dist[nidx]:
                        dist[nidx] = cand
                        pred[nidx] = idx
                        if heap_n >= heap_d.size:
                            bigger_d = np.empty(2 * heap_d.size, np.float64)
                            bigger_i = np.empty(2 * heap_d.size, np.int32)
                            bigger_d[:heap_n] = heap_d[:heap_n]
                            bigger_i[:heap_n] = heap_i[:heap_n]
                            heap_d = bigger_d
                            heap_i = bigger_i
                        heap_n = _heap_push(heap_d, heap_i, heap_n, cand, nidx)
    return dist, pred, order[:n_done].copy()
