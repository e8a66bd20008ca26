"""Numba kernels for the hierarchical navigable-small-world graph.

Vectors are stored L2-normalised in float32; distances are negated inner
products accumulated in float64, so smaller distance means higher cosine
similarity. All orderings are lexicographic on (distance, id), which makes
builds and queries fully deterministic.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _neg_dot(vecs, i, q):
    acc = 0.0
    for j in range(vecs.shape[1]):
        acc += np.float64(vecs[i, j]) * np.float64(q[j])
    return -acc


@njit(cache=True)
def _neg_dot2(vecs, i, j):
    acc = 0.0
    for t in range(vecs.shape[1]):
        acc += np.float64(vecs[i, t]) * np.float64(vecs[j, t])
    return -acc


@njit(cache=True)
def _hpush(kd, ki, size, d, i):
    pos = size
    kd[pos] = d
    ki[pos] = i
    while pos > 0:
        parent = (pos - 1) >> 1
        if kd[parent] > kd[pos] or (kd[parent] == kd[pos] and ki[parent] > ki[pos]):
            kd[parent], kd[pos] = kd[pos], kd[parent]
            ki[parent], ki[pos] = ki[pos], ki[parent]
            pos = parent
        else:
            break
    return size + 1


@njit(cache=True)
def _hpop(kd, ki, size):
    d0 = kd[0]
    i0 = ki[0]
    size -= 1
    kd[0] = kd[size]
    ki[0] = ki[size]
    pos = 0
    while True:
        left = 2 * pos + 1
        right = left + 1
        best = pos
        if left < size and (kd[left] < kd[best]
                            or (kd[left] == kd[best] and ki[left] < ki[best])):
            best = left
        if right < size and (kd[right] < kd[best]
                             or (kd[right] == kd[best] and ki[right] < ki[best])):
            best = right
        if best == pos:
            break
        kd[best], kd[pos] = kd[pos], kd[best]
        ki[best], ki[pos] = ki[pos], ki[best]
        pos = best
    return d0, i0, size


@njit(cache=True)
def _layer_base(adj_start, M, M0, node, layer):
    if layer == 0:
        return adj_start[node]
    return adj_start[node] + M0 + (layer - 1) * M


@njit(cache=True)
def _greedy_step(vecs, q, neighbors, counts, adj_start, cnt_start, M, M0, ep, epd, layer):
    """Greedy descent to the lexicographic (distance, id) minimum at a layer."""
    improved = True
    while improved:
        improved = False
        base = _layer_base(adj_start, M, M0, ep, layer)
        cnt = counts[cnt_start[ep] + layer]
        for t in range(cnt):
            e = neighbors[base + t]
            de = _neg_dot(vecs, e, q)
            if de < epd or (de == epd and e < ep):
                epd = de
                ep = e
                improved = True
    return ep, epd


@njit(cache=True)
def _search_layer(vecs, q, neighbors, counts, adj_start, cnt_start, M, M0,
                  ep_ids, ep_n, ef, layer, visited, epoch,
                  cd, ci, rd, ri, out_d, out_i):
    """Beam search at one layer. Results land in out_d/out_i sorted ascending
    by (distance, id); returns how many were found (<= ef).

    The result heap stores negated keys so its root is the current worst hit.
    """
    csize = 0
    rsize = 0
    for t in range(ep_n):
        e = ep_ids[t]
        if visited[e] == epoch:
            continue
        visited[e] = epoch
        de = _neg_dot(vecs, e, q)
        csize = _hpush(cd, ci, csize, de, e)
        rsize = _hpush(rd, ri, rsize, -de, -e)
        if rsize > ef:
            _, _, rsize = _hpop(rd, ri, rsize)
    while csize > 0:
        d, c, csize = _hpop(cd, ci, csize)
        if rsize >= ef and d > -rd[0]:
            break
        base = _layer_base(adj_start, M, M0, c, layer)
        cnt = counts[cnt_start[c] + layer]
        for t in range(cnt):
            e = neighbors[base + t]
            if visited[e] == epoch:
                continue
            visited[e] = epoch
            de = _neg_dot(vecs, e, q)
            if rsize < ef or de < -rd[0]:
                csize = _hpush(cd, ci, csize, de, e)
                rsize = _hpush(rd, ri, rsize, -de, -e)
                if rsize > ef:
                    _, _, rsize = _hpop(rd, ri, rsize)
    found = rsize
    k = rsize
    while k > 0:
        dneg, ineg, k = _hpop(rd, ri, k)
        out_d[k] = -dneg
        out_i[k] = -ineg
    return found


@njit(cache=True)
def _select_heuristic(vecs, cand_d, cand_i, cand_n, m, out):
    """Diversity-aware neighbour selection: keep a candidate only if it is
    closer to the query than to every neighbour kept so far."""
    count = 0
    for idx in range(cand_n):
        if count >= m:
            break
        e = cand_i[idx]
        de = cand_d[idx]
        ok = True
        for r in range(count):
            if _neg_dot2(vecs, e, out[r]) < de:
                ok = False
                break
        if ok:
            out[count] = e
            count += 1
    return count


@njit(cache=True)
def _sort_pairs(d, i, n):
    for a in range(1, n):
        dv = d[a]
        iv = i[a]
        b = a - 1
        while b >= 0 and (d[b] > dv or (d[b] == dv and i[b] > iv)):
            d[b + 1] = d[b]
            i[b + 1] = i[b]
            b -= 1
        d[b + 1] = dv
        i[b + 1] = iv


@njit(cache=True)
def build_graph(vecs, levels, M, efc):
    """Insert all rows in ascending id order and return the flat graph arrays.

    Returns (neighbors, counts, adj_start, cnt_start, entry, max_level).
    Layer 0 holds up to 2*M links per node, upper layers up to M.
    """
    n = vecs.shape[0]
    M0 = 2 * M
    adj_start = np.zeros(n, np.int64)
    cnt_start = np.zeros(n, np.int64)
    total_slots = 0
    total_layers = 0
    for i in range(n):
        adj_start[i] = total_slots
        cnt_start[i] = total_layers
        total_slots += M0 + levels[i] * M
        total_layers += levels[i] + 1
    neighbors = np.zeros(total_slots, np.int32)
    counts = np.zeros(total_layers, np.int32)

    visited = np.zeros(n, np.int64)
    epoch = 0
    cd = np.empty(n + efc + 8, np.float64)
    ci = np.empty(n + efc + 8, np.int64)
    rd = np.empty(efc + 2, np.float64)
    ri = np.empty(efc + 2, np.int64)
    out_d = np.empty(efc + 1, np.float64)
    out_i = np.empty(efc + 1, np.int64)
    sel = np.empty(M + 1, np.int64)
    pr_d = np.empty(M0 + 2, np.float64)
    pr_i = np.empty(M0 + 2, np.int64)
    pr_sel = np.empty(M0 + 2, np.int64)
    ep_ids = np.empty(efc + 1, np.int64)

    entry = 0
    max_lvl = levels[0]
    for i in range(1, n):
        q = vecs[i]
        lvl = levels[i]
        ep = entry
        epd = _neg_dot2(vecs, ep, i)
        layer = max_lvl
        while layer > lvl:
            ep, epd = _greedy_step(vecs, q, neighbors, counts, adj_start, cnt_start,
                                   M, M0, ep, epd, layer)
            layer -= 1
        top = lvl if lvl < max_lvl else max_lvl
        ep_ids[0] = ep
        ep_n = 1
        for layer in range(top, -1, -1):
            epoch += 1
            found = _search_layer(vecs, q, neighbors, counts, adj_start, cnt_start,
                                  M, M0, ep_ids, ep_n, efc, layer, visited, epoch,
                                  cd, ci, rd, ri, out_d, out_i)
            nsel = _select_heuristic(vecs, out_d, out_i, found, M, sel)
            base_i = _layer_base(adj_start, M, M0, i, layer)
            for s in range(nsel):
                neighbors[base_i + s] = sel[s]
            counts[cnt_start[i] + layer] = nsel
            cap = M0 if layer == 0 else M
            for s in range(nsel):
                u = sel[s]
                base_u = _layer_base(adj_start, M, M0, u, layer)
                cu = counts[cnt_start[u] + layer]
                if cu < cap:
                    neighbors[base_u + cu] = i
                    counts[cnt_start[u] + layer] = cu + 1
                else:
                    pn = 0
                    for t in range(cu):
                        v = neighbors[base_u + t]
                        pr_d[pn] = _neg_dot2(vecs, u, v)
                        pr_i[pn] = v
                        pn += 1
                    pr_d[pn] = _neg_dot2(vecs, u, i)
                    pr_i[pn] = i
                    pn += 1
                    _sort_pairs(pr_d, pr_i, pn)
                    kn = _select_heuristic(vecs, pr_d, pr_i, pn, cap, pr_sel)
                    for t in range(kn):
                        neighbors[base_u + t] = pr_sel[t]
                    counts[cnt_start[u] + layer] = kn
            for t in range(found):
                ep_ids[t] = out_i[t]
            ep_n = found if found > 0 else 1
        if lvl > max_lvl:
            entry = i
            max_lvl = lvl
    return neighbors, counts, adj_start, cnt_start, entry, max_lvl


@njit(cache=True)
def knn_search(vecs, neighbors, counts, adj_start, cnt_start, M, entry, max_lvl,
               query_id, ef):
    """Approximate nearest neighbours of a stored row. Returns (ids, sims)
    sorted by non-increasing similarity, ties by ascending id. The query row
    itself is among the results; callers filter it.

    Scratch memory is allocated per call, so concurrent read-only queries
    from multiple threads are safe.
    """
    n = vecs.shape[0]
    M0 = 2 * M
    q = vecs[query_id]
    visited = np.zeros(n, np.int64)
    ep = entry
    epd = _neg_dot(vecs, ep, q)
    for layer in range(max_lvl, 0, -1):
        ep, epd = _greedy_step(vecs, q, neighbors, counts, adj_start, cnt_start,
                               M, M0, ep, epd, layer)
    cd = np.empty(n + ef + 8, np.float64)
    ci = np.empty(n + ef + 8, np.int64)
    rd = np.empty(ef + 2, np.float64)
    ri = np.empty(ef + 2, np.int64)
    out_d = np.empty(ef + 1, np.float64)
    out_i = np.empty(ef + 1, np.int64)
    ep_ids = np.empty(1, np.int64)
    ep_ids[0] = ep
    found = _search_layer(vecs, q, neighbors, counts, adj_start, cnt_start,
                          M, M0, ep_ids, 1, ef, 0, visited, 1,
                          cd, ci, rd, ri, out_d, out_i)
    ids = np.empty(found, np.int64)
    sims = np.empty(found, np.float64)
    for t in range(found):
        ids[t] = out_i[t]
        sims[t] = -out_d[t]
    return ids, sims
