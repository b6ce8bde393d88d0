"""Numba kernels for honest subsampled trees.

Trees are stored as flat arrays (feature < 0 marks a leaf).  Split structure is
chosen on the structure half of each tree's subsample; leaf statistics come
only from the held-out honest half.  Nodes whose honest count falls below
min_leaf are collapsed bottom-up, so every reachable leaf carries at least
min_leaf honest units.  All randomness flows through a per-tree splitmix64
stream derived from (seed, tree index), which makes fits and predictions
independent of thread count and scheduling.

mode 0: regression/probability trees; resp_a is the response, criterion is
        the usual variance reduction, leaf value = honest mean.
mode 1: causal trees on centered data; resp_a = wc*yc, resp_b = wc*wc,
        criterion sum_child n_child * (sum_a/sum_b)^2, leaf effect =
        sum_a/sum_b with validity requiring both raw arms present.
"""

import numpy as np
from numba import njit, prange

LEAF = np.int32(-1)
_DEN_EPS = 1e-12


@njit(inline="always", cache=True)
def _splitmix64(state):
    state = state + np.uint64(0x9E3779B97F4A7C15)
    z = state
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return state, z ^ (z >> np.uint64(31))


@njit(inline="always", cache=True)
def _rand_below(state, bound):
    # bound is a positive int64; modulo bias is irrelevant at these scales
    state, z = _splitmix64(state)
    return state, np.int64(z % np.uint64(bound))


@njit(cache=True)
def _tree_state(seed, tree):
    s = np.uint64(seed) ^ (np.uint64(tree) * np.uint64(0xD1342543DE82EF95) + np.uint64(1))
    s, _ = _splitmix64(s)
    s, _ = _splitmix64(s)
    return s


@njit(cache=True)
def _draw_subsample(state, n, size, out):
    """Partial Fisher-Yates; fills out[:size] with distinct unit ids."""
    pool = np.empty(n, dtype=np.int32)
    for i in range(n):
        pool[i] = i
    for i in range(size):
        state, j = _rand_below(state, n - i)
        k = i + j
        tmp = pool[i]
        pool[i] = pool[k]
        pool[k] = tmp
        out[i] = pool[i]
    return state


@njit(cache=True)
def _grow_tree(X, ra, rb, mode, sidx, n_struct, min_split, split_tries, state,
               feat, thr, left, right):
    """Grow one tree on the structure units sidx[:n_struct]; returns node count.

    min_split is the minimum structure count per child.  The per-node stack is
    explicit; sidx is permuted in place so each node owns a contiguous range.
    """
    p = X.shape[1]
    n_nodes = 1
    # stack of (node, start, end)
    cap = 4 * n_struct + 4
    st_node = np.empty(cap, dtype=np.int32)
    st_lo = np.empty(cap, dtype=np.int32)
    st_hi = np.empty(cap, dtype=np.int32)
    top = 0
    st_node[0] = 0
    st_lo[0] = 0
    st_hi[0] = n_struct
    top = 1
    featbuf = np.empty(p, dtype=np.int32)
    while top > 0:
        top -= 1
        node = st_node[top]
        lo = st_lo[top]
        hi = st_hi[top]
        m = hi - lo
        feat[node] = LEAF
        if m < 2 * min_split:
            continue
        # parent score
        sa = 0.0
        sb = 0.0
        for i in range(lo, hi):
            u = sidx[i]
            sa += ra[u]
            sb += rb[u]
        best_gain = 1e-12
        best_f = -1
        best_thr = 0.0
        if mode == 0:
            parent = sa * sa / m
        else:
            if sb <= _DEN_EPS:
                continue
            d = sa / sb
            parent = m * d * d
        # sample split_tries distinct features
        for i in range(p):
            featbuf[i] = i
        tries = split_tries if split_tries < p else p
        for t in range(tries):
            state, j = _rand_below(state, p - t)
            k = t + j
            tmpf = featbuf[t]
            featbuf[t] = featbuf[k]
            featbuf[k] = tmpf
            f = featbuf[t]
            # stable sort of the node's units by feature value
            vals = np.empty(m, dtype=np.float64)
            for i in range(m):
                vals[i] = X[sidx[lo + i], f]
            order = np.argsort(vals, kind="mergesort")
            ca = 0.0
            cb = 0.0
            for i in range(m - 1):
                u = sidx[lo + order[i]]
                ca += ra[u]
                cb += rb[u]
                nl = i + 1
                nr = m - nl
                if nl < min_split:
                    continue
                if nr < min_split:
                    break
                vl = vals[order[i]]
                vr = vals[order[i + 1]]
                if vl == vr:
                    continue
                if mode == 0:
                    gain = ca * ca / nl + (sa - ca) * (sa - ca) / nr - parent
                else:
                    db = sb - cb
                    if cb <= _DEN_EPS or db <= _DEN_EPS:
                        continue
                    dl = ca / cb
                    dr = (sa - ca) / db
                    gain = nl * dl * dl + nr * dr * dr - parent
                if gain > best_gain:
                    best_gain = gain
                    best_f = f
                    best_thr = 0.5 * (vl + vr)
        if best_f < 0:
            continue
        # stable partition by x <= thr
        buf = np.empty(m, dtype=np.int32)
        nl = 0
        for i in range(lo, hi):
            if X[sidx[i], best_f] <= best_thr:
                buf[nl] = sidx[i]
                nl += 1
        nr = nl
        for i in range(lo, hi):
            if X[sidx[i], best_f] > best_thr:
                buf[nr] = sidx[i]
                nr += 1
        for i in range(m):
            sidx[lo + i] = buf[i]
        feat[node] = np.int32(best_f)
        thr[node] = best_thr
        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        left[node] = lc
        right[node] = rc
        st_node[top] = lc
        st_lo[top] = lo
        st_hi[top] = lo + nl
        top += 1
        st_node[top] = rc
        st_lo[top] = lo + nl
        st_hi[top] = hi
        top += 1
    return n_nodes


@njit(cache=True)
def _fill_honest(X, ra, rb, wraw, mode, hidx, n_honest,
                 feat, thr, left, right, cnt, sum_a, sum_b, cnt_t):
    """Route honest units down the tree, accumulating stats at every node."""
    for i in range(n_honest):
        u = hidx[i]
        node = 0
        while True:
            cnt[node] += 1
            sum_a[node] += ra[u]
            if mode == 1:
                sum_b[node] += rb[u]
                cnt_t[node] += wraw[u]
            if feat[node] < 0:
                break
            if X[u, feat[node]] <= thr[node]:
                node = left[node]
            else:
                node = right[node]


@njit(cache=True)
def _prune(n_nodes, feat, left, right, cnt, min_leaf):
    """Collapse any split whose child honest count is below min_leaf."""
    for node in range(n_nodes - 1, -1, -1):
        if feat[node] >= 0:
            if cnt[left[node]] < min_leaf or cnt[right[node]] < min_leaf:
                feat[node] = LEAF


@njit(parallel=True, cache=True)
def build_forest(X, ra, rb, wraw, mode, n_trees, subsample, n_honest, min_leaf,
                 split_tries, seed, max_nodes,
                 feat, thr, left, right, cnt, sum_a, sum_b, cnt_t,
                 n_nodes_out, membership):
    """Build all trees; per-tree outputs live in [t*max_nodes, (t+1)*max_nodes)."""
    n = X.shape[0]
    for t in prange(n_trees):
        state = _tree_state(seed, t)
        sub = np.empty(subsample, dtype=np.int32)
        state = _draw_subsample(state, n, subsample, sub)
        n_struct = subsample - n_honest
        off = t * max_nodes
        fe = feat[off:off + max_nodes]
        th = thr[off:off + max_nodes]
        le = left[off:off + max_nodes]
        ri = right[off:off + max_nodes]
        for i in range(n_struct):
            membership[sub[i], t] = 1
        for i in range(n_struct, subsample):
            membership[sub[i], t] = 2
        nn = _grow_tree(X, ra, rb, mode, sub[:n_struct], n_struct,
                        min_leaf, split_tries, state, fe, th, le, ri)
        n_nodes_out[t] = nn
        _fill_honest(X, ra, rb, wraw, mode, sub[n_struct:], n_honest,
                     fe, th, le, ri,
                     cnt[off:off + max_nodes], sum_a[off:off + max_nodes],
                     sum_b[off:off + max_nodes], cnt_t[off:off + max_nodes])
        _prune(nn, fe, le, ri, cnt[off:off + max_nodes], min_leaf)


@njit(inline="always", cache=True)
def _leaf_of(x, feat, thr, left, right):
    node = 0
    while feat[node] >= 0:
        if x[feat[node]] <= thr[node]:
            node = left[node]
        else:
            node = right[node]
    return node


@njit(parallel=True, cache=True)
def predict_mean(Xq, n_trees, max_nodes, feat, thr, left, right, cnt, sum_a,
                 membership, query_rows, out):
    """Average honest leaf means; query_rows[i] >= 0 restricts to out-of-bag trees."""
    nq = Xq.shape[0]
    for q in prange(nq):
        row = query_rows[q]
        acc = 0.0
        used = 0
        for t in range(n_trees):
            if row >= 0 and membership[row, t] != 0:
                continue
            off = t * max_nodes
            node = off + _leaf_of(Xq[q], feat[off:off + max_nodes],
                                  thr[off:off + max_nodes],
                                  left[off:off + max_nodes],
                                  right[off:off + max_nodes])
            if cnt[node] > 0:
                acc += sum_a[node] / cnt[node]
                used += 1
        out[q] = acc / used if used > 0 else np.nan


@njit(parallel=True, cache=True)
def predict_effect(Xq, n_trees, max_nodes, feat, thr, left, right, cnt, sum_a,
                   sum_b, cnt_t, membership, query_rows, out, n_valid_out):
    """Forest-weighted effect: ratio of leaf-size-normalized moment sums."""
    nq = Xq.shape[0]
    for q in prange(nq):
        row = query_rows[q]
        num = 0.0
        den = 0.0
        used = 0
        for t in range(n_trees):
            if row >= 0 and membership[row, t] != 0:
                continue
            off = t * max_nodes
            node = off + _leaf_of(Xq[q], feat[off:off + max_nodes],
                                  thr[off:off + max_nodes],
                                  left[off:off + max_nodes],
                                  right[off:off + max_nodes])
            c = cnt[node]
            if c < 1 or cnt_t[node] <= 0 or cnt_t[node] >= c or sum_b[node] <= _DEN_EPS:
                continue
            num += sum_a[node] / c
            den += sum_b[node] / c
            used += 1
        n_valid_out[q] = used
        out[q] = num / den if used > 0 and den > _DEN_EPS else np.nan


@njit(cache=True)
def honest_leaf_assignment(X, n_trees, max_nodes, feat, thr, left, right,
                           membership, units_off, units, unit_leaf):
    """Post-prune leaf of every honest unit, per tree (CSR layout over trees)."""
    n = X.shape[0]
    for t in range(n_trees):
        k = units_off[t]
        off = t * max_nodes
        for u in range(n):
            if membership[u, t] == 2:
                units[k] = u
                unit_leaf[k] = _leaf_of(X[u], feat[off:off + max_nodes],
                                        thr[off:off + max_nodes],
                                        left[off:off + max_nodes],
                                        right[off:off + max_nodes])
                k += 1


@njit(parallel=True, cache=True)
def effect_se_proxy(Xq, X, yc, wc, tau, n_trees, max_nodes, feat, thr, left,
                    right, cnt, sum_b, cnt_t, membership, units_off, units,
                    unit_leaf, query_rows, out):
    """Plug-in sandwich treating the forest weights as fixed.

    alpha_i(x) accumulates 1/|leaf| over valid trees whose honest leaf at x
    contains unit i; Var ~ sum alpha_i^2 psi_i^2 / (sum alpha_i wc_i^2)^2 with
    psi_i = wc_i * (yc_i - wc_i * tau(x)).
    """
    n = X.shape[0]
    nq = Xq.shape[0]
    for q in prange(nq):
        row = query_rows[q]
        alpha = np.zeros(n, dtype=np.float64)
        den = 0.0
        for t in range(n_trees):
            if row >= 0 and membership[row, t] != 0:
                continue
            off = t * max_nodes
            leaf = off + _leaf_of(Xq[q], feat[off:off + max_nodes],
                                  thr[off:off + max_nodes],
                                  left[off:off + max_nodes],
                                  right[off:off + max_nodes])
            c = cnt[leaf]
            if c < 1 or cnt_t[leaf] <= 0 or cnt_t[leaf] >= c or sum_b[leaf] <= _DEN_EPS:
                continue
            inv = 1.0 / c
            for k in range(units_off[t], units_off[t + 1]):
                if unit_leaf[k] + off == leaf:
                    alpha[units[k]] += inv
            den += sum_b[leaf] * inv
        if den <= _DEN_EPS:
            out[q] = np.nan
            continue
        acc = 0.0
        for u in range(n):
            if alpha[u] > 0.0:
                psi = wc[u] * (yc[u] - wc[u] * tau[q])
                acc += alpha[u] * alpha[u] * psi * psi
        out[q] = np.sqrt(acc) / den
