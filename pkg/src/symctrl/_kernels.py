"""Compiled inner loops."""
import numba
import numpy as np


@numba.njit(cache=True)
def count_in_boxes(table, tstrides, lo, hi, counts):
    """Sum of the indicator behind ``table`` over each (possibly wrapped) box.

    ``table`` is the zero-padded prefix-sum array from ``core.prefix_table``;
    ``lo``/``hi`` hold inclusive lattice corners, one box per row.
    """
    n_boxes, n = lo.shape
    flat = table.ravel()
    out = np.empty(n_boxes, dtype=np.int64)
    start = np.empty(n, dtype=np.int64)
    stop = np.empty(n, dtype=np.int64)
    for b in range(n_boxes):
        for i in range(n):
            a = lo[b, i]
            e = hi[b, i]
            if e < a:
                e += counts[i]
            start[i] = a
            stop[i] = e + 1
        total = 0
        for bits in range(1 << n):
            off = 0
            neg = n
            for i in range(n):
                if (bits >> i) & 1:
                    off += stop[i] * tstrides[i]
                    neg -= 1
                else:
                    off += start[i] * tstrides[i]
            if neg % 2 == 0:
                total += flat[off]
            else:
                total -= flat[off]
        out[b] = total
    return out


@numba.njit(cache=True)
def _box_cells(lo, hi, counts, strides, periodic, out):
    """Write the linear ids of one lattice box into ``out``; returns the count."""
    n = lo.shape[0]
    width = np.empty(n, dtype=np.int64)
    total = 1
    for i in range(n):
        a = lo[i]
        e = hi[i]
        if e >= a:
            width[i] = e - a + 1
        elif periodic[i]:
            width[i] = e + counts[i] - a + 1
        else:
            width[i] = 0
        total *= width[i]
    if total == 0:
        return 0
    step = np.zeros(n, dtype=np.int64)
    for j in range(total):
        cid = 0
        for i in range(n):
            k = lo[i] + step[i]
            if k >= counts[i]:
                k -= counts[i]
            cid += k * strides[i]
        out[j] = cid
        i = n - 1
        while i >= 0:
            step[i] += 1
            if step[i] < width[i]:
                break
            step[i] = 0
            i -= 1
    return total


@numba.njit(cache=True)
def box_predecessors(lo, hi, usable, counts, strides, periodic, n_states):
    """Reverse index of a box-mode system.

    Returns ``(indptr, pairs, sizes)``: for each state ``s`` the pair indices
    ``pairs[indptr[s]:indptr[s+1]]`` whose box contains ``s``, and the box
    size of every pair (0 where ``usable`` is false).
    """
    n_pairs = lo.shape[0]
    maxw = 1
    for i in range(counts.shape[0]):
        maxw *= counts[i]
    buf = np.empty(min(maxw, 1 << 22), dtype=np.int64)
    deg = np.zeros(n_states + 1, dtype=np.int64)
    sizes = np.zeros(n_pairs, dtype=np.int64)
    for p in range(n_pairs):
        if not usable[p]:
            continue
        m = _box_cells(lo[p], hi[p], counts, strides, periodic, buf)
        sizes[p] = m
        for j in range(m):
            deg[buf[j] + 1] += 1
    for s in range(n_states):
        deg[s + 1] += deg[s]
    fill = deg[:-1].copy()
    pairs = np.empty(deg[n_states], dtype=np.int32)
    for p in range(n_pairs):
        if not usable[p]:
            continue
        m = _box_cells(lo[p], hi[p], counts, strides, periodic, buf)
        for j in range(m):
            s = buf[j]
            pairs[fill[s]] = p
            fill[s] += 1
    return deg, pairs, sizes


@numba.njit(cache=True)
def list_predecessors(indptr, indices, usable, n_states):
    n_pairs = indptr.shape[0] - 1
    deg = np.zeros(n_states + 1, dtype=np.int64)
    sizes = np.zeros(n_pairs, dtype=np.int64)
    for p in range(n_pairs):
        if not usable[p]:
            continue
        sizes[p] = indptr[p + 1] - indptr[p]
        for j in range(indptr[p], indptr[p + 1]):
            deg[indices[j] + 1] += 1
    for s in range(n_states):
        deg[s + 1] += deg[s]
    fill = deg[:-1].copy()
    pairs = np.empty(deg[n_states], dtype=np.int64)
    for p in range(n_pairs):
        if not usable[p]:
            continue
        for j in range(indptr[p], indptr[p + 1]):
            s = indices[j]
            pairs[fill[s]] = p
            fill[s] += 1
    return deg, pairs, sizes


@numba.njit(cache=True)
def layered_attractor(pred_ptr, pred_pairs, sizes, n_inputs, base, avoid, max_layers):
    """Breadth-first least fixed point of ``Y = base | pre(Y)``.

    ``sizes`` holds the successor count of every usable pair (0 marks pairs
    that can never be contained).  Returns ``(ranks, zero_at, layers)``:
    rank -1 outside the attractor, and for every pair the rank ``k`` such that all successors of
    the pair have rank below ``k`` (-1 if never).  A pair of a cell of rank
    ``k > 0`` is rank-decreasing iff its ``zero_at`` equals ``k``.
    """
    n = base.shape[0]
    remaining = sizes.copy()
    zero_at = np.full(sizes.shape[0], -1, dtype=np.int64)
    ranks = np.full(n, -1, dtype=np.int64)
    frontier = np.empty(n, dtype=np.int64)
    nf = 0
    for s in range(n):
        if base[s] and not avoid[s]:
            ranks[s] = 0
            frontier[nf] = s
            nf += 1
    nxt = np.empty(n, dtype=np.int64)
    k = 0
    while nf > 0:
        if k > max_layers:
            return ranks, zero_at, -1
        nn = 0
        for f in range(nf):
            s = frontier[f]
            for j in range(pred_ptr[s], pred_ptr[s + 1]):
                p = pred_pairs[j]
                remaining[p] -= 1
                if remaining[p] == 0:
                    zero_at[p] = k + 1
                    x = p // n_inputs
                    if ranks[x] < 0 and not avoid[x]:
                        ranks[x] = k + 1
                        nxt[nn] = x
                        nn += 1
        for f in range(nn):
            frontier[f] = nxt[f]
        nf = nn
        k += 1
    return ranks, zero_at, k
