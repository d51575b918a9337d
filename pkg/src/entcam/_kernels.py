"""Compiled inner loops for the event-stream operators."""
import numpy as np
from numba import njit


@njit(cache=True)
def _find(parent, i):
    while parent[i] != i:
        parent[i] = parent[parent[i]]
        i = parent[i]
    return i


@njit(cache=True)
def cluster_labels(x, y, t, window, radius):
    """Label time-sorted hits; labels follow order of first appearance."""
    n = t.shape[0]
    parent = np.arange(n)
    for i in range(n):
        ti = t[i]
        for j in range(i + 1, n):
            if t[j] - ti > window:
                break
            if abs(x[j] - x[i]) <= radius and abs(y[j] - y[i]) <= radius:
                a = _find(parent, i)
                b = _find(parent, j)
                if a != b:
                    if a < b:
                        parent[b] = a
                    else:
                        parent[a] = b
    labels = np.empty(n, np.int64)
    remap = np.full(n, -1, np.int64)
    nxt = 0
    for i in range(n):
        r = _find(parent, i)
        if remap[r] < 0:
            remap[r] = nxt
            nxt += 1
        labels[i] = remap[r]
    return labels, nxt


@njit(cache=True)
def centroids(x, y, t, tot, labels, n_clusters):
    """Amplitude-weighted centroids; time and index of the max-tot hit.

    Hits must be sorted by (t, x, y) so the first maximal hit met wins
    the (earliest toa, smallest x, smallest y) tie rule.
    """
    sx = np.zeros(n_clusters)
    sy = np.zeros(n_clusters)
    st = np.zeros(n_clusters, np.int64)
    npx = np.zeros(n_clusters, np.int64)
    best = np.full(n_clusters, -1, np.int64)
    for i in range(t.shape[0]):
        c = labels[i]
        w = tot[i]
        sx[c] += w * x[i]
        sy[c] += w * y[i]
        st[c] += w
        npx[c] += 1
        b = best[c]
        if b < 0 or tot[i] > tot[b]:
            best[c] = i
    return sx / st, sy / st, st, npx, best


@njit(cache=True)
def greedy_pairs(t, half, window, cross_only):
    """Forward greedy pairing; returns index arrays and same-half count."""
    n = t.shape[0]
    paired = np.zeros(n, np.bool_)
    ia = np.empty(n // 2 + 1, np.int64)
    ib = np.empty(n // 2 + 1, np.int64)
    m = 0
    same = 0
    for i in range(n):
        if i + 1 < n and half[i + 1] == half[i] and t[i + 1] - t[i] <= window:
            same += 1
        if paired[i]:
            continue
        ti = t[i]
        for j in range(i + 1, n):
            if t[j] - ti > window:
                break
            if paired[j]:
                continue
            if cross_only and half[j] == half[i]:
                continue
            paired[i] = True
            paired[j] = True
            ia[m] = i
            ib[m] = j
            m += 1
            break
    return ia[:m], ib[:m], same


@njit(cache=True)
def dead_time_mask(pixel, t, dead_time, last):
    """Non-paralysable per-pixel dead time over time-sorted hits.

    ``last`` holds the previous accepted time per pixel and is updated
    in place so the filter can run over successive chunks.
    """
    n = t.shape[0]
    keep = np.ones(n, np.bool_)
    for i in range(n):
        p = pixel[i]
        if last[p] >= 0 and t[i] - last[p] < dead_time:
            keep[i] = False
        else:
            last[p] = t[i]
    return keep


@njit(cache=True)
def brute_force_window_pairs(t, half, window, cross_only):
    """Count every (i, j) with |t_i - t_j| <= window, O(n^2)."""
    n = t.shape[0]
    count = 0
    for i in range(n):
        for j in range(i + 1, n):
            if abs(t[j] - t[i]) <= window and (not cross_only or half[i] != half[j]):
                count += 1
    return count
