"""Compiled RockSample graph construction.

Produces the same arrays as the reference builder in :mod:`gammazero.graph`
(node order, features, edges sorted by (dst, src, type)) but skips the
Python-level bookkeeping of node identifiers. Search uses it to encode
thousands of small beliefs per decision; the reference builder stays the
source of truth and the two are compared in the tests.
"""

from __future__ import annotations

import numpy as np

from . import _kernels as K

_MOVE_DX = np.array([0, 0, 1, -1], dtype=np.int64)
_MOVE_DY = np.array([1, -1, 0, 0], dtype=np.int64)


def _band(p):
    if p > 0.95:
        return 0
    if p >= 0.70:
        return 1
    if p >= 0.30:
        return 2
    return 3


def _rs_graph(states, weights, n, rx, ry, halflife, tau, move_dx, move_dy):
    m = states.shape[0]
    k = rx.shape[0]
    S = n * n
    mass = np.zeros(S + 1)
    for j in range(m):
        key = S if states[j, 2] != 0 else states[j, 1] * n + states[j, 0]
        mass[key] += weights[j]
    good = np.zeros(k)
    sampled = np.zeros(k)
    for j in range(m):
        for i in range(k):
            good[i] += weights[j] * states[j, 3 + i]
            sampled[i] += weights[j] * states[j, 3 + k + i]

    # expectations over live agent cells
    live_total = 0.0
    for c in range(S):
        if mass[c] > 0:
            live_total += mass[c]
    e_dist = np.zeros(k)
    e_acc = np.zeros(k)
    e_manh = np.zeros(k)
    coloc = np.zeros(k)
    move_delta = np.zeros((4, k))
    if live_total > 0:
        for c in range(S):
            if mass[c] <= 0:
                continue
            pw = mass[c] / live_total
            ax = c % n
            ay = c // n
            for i in range(k):
                dx = ax - rx[i]
                dy = ay - ry[i]
                d = np.sqrt(float(dx * dx + dy * dy))
                e_dist[i] += pw * d
                e_acc[i] += pw * 0.5 * (1.0 + 2.0 ** (-d / halflife))
                if dx == 0 and dy == 0:
                    coloc[i] += pw
                manh = abs(dx) + abs(dy)
                e_manh[i] += pw * manh
                for mv in range(4):
                    mx = ax + move_dx[mv]
                    my = ay + move_dy[mv]
                    if mx < 0 or mx >= n or my < 0 or my >= n:
                        mx = ax
                        my = ay
                    after = abs(mx - rx[i]) + abs(my - ry[i])
                    move_delta[mv, i] += pw * (after - manh)
        for i in range(k):
            e_dist[i] /= n
            e_manh[i] /= n
            coloc[i] *= live_total

    # locations: live cells and rock cells by (y, x), then the exit
    is_loc = np.zeros(S, dtype=np.bool_)
    for c in range(S):
        if mass[c] > 0:
            is_loc[c] = True
    for i in range(k):
        is_loc[ry[i] * n + rx[i]] = True
    loc_index = np.full(S + 1, -1, dtype=np.int64)
    n_loc = 0
    for c in range(S):
        if is_loc[c]:
            loc_index[c] = n_loc
            n_loc += 1
    loc_index[S] = n_loc
    n_loc += 1

    # predicates in (name, args) order: AtLocation, RockAt, RockGood, RockSampled
    cap = S + 1 + 3 * k
    p_kind = np.empty(cap, dtype=np.int64)
    p_arg = np.empty(cap, dtype=np.int64)
    p_sup = np.empty(cap)
    P = 0
    if mass[S] > 0 and min(mass[S], 1.0) >= tau:
        p_kind[P] = 0
        p_arg[P] = S
        p_sup[P] = min(mass[S], 1.0)
        P += 1
    for x in range(n):
        for y in range(n):
            c = y * n + x
            if mass[c] > 0 and min(mass[c], 1.0) >= tau:
                p_kind[P] = 0
                p_arg[P] = c
                p_sup[P] = min(mass[c], 1.0)
                P += 1
    for i in range(k):
        p_kind[P] = 1
        p_arg[P] = i
        p_sup[P] = 1.0
        P += 1
    for i in range(k):
        s = min(good[i], 1.0)
        if good[i] > 0 and s >= tau:
            p_kind[P] = 2
            p_arg[P] = i
            p_sup[P] = s
            P += 1
    for i in range(k):
        s = min(sampled[i], 1.0)
        if sampled[i] > 0 and s >= tau:
            p_kind[P] = 3
            p_arg[P] = i
            p_sup[P] = s
            P += 1

    l0 = 2 + k
    p0 = l0 + n_loc
    a0 = p0 + P
    n_act = 5 + k
    N = a0 + n_act
    node_type = np.empty(N, dtype=np.int64)
    xn = np.zeros((N, 27))
    node_type[0] = 4
    node_type[1 : l0] = 0
    node_type[l0:p0] = 1
    node_type[p0:a0] = 2
    node_type[a0:] = 3
    for j in range(N):
        xn[j, node_type[j]] = 1.0
    xn[1, 5] = 1.0
    for i in range(k):
        xn[2 + i, 6] = 1.0
        xn[2 + i, 7] = good[i]
    for c in range(S):
        if is_loc[c]:
            r = l0 + loc_index[c]
            xn[r, 8] = (c % n) / n
            xn[r, 9] = (c // n) / n
    r = l0 + loc_index[S]
    xn[r, 8] = 1.0
    xn[r, 9] = 0.5
    xn[r, 10] = 1.0
    for q in range(P):
        xn[p0 + q, 12 + p_kind[q]] = 1.0
        xn[p0 + q, 17] = p_sup[q]
    for a in range(n_act):
        xn[a0 + a, 18 + (a if a < 5 else 5)] = 1.0

    # one-directional relations; each becomes two edges below
    cap_e = N + 2 * P + n_act + 5 * P + 4 * k + 3 * k + 8
    ea = np.empty(cap_e, dtype=np.int64)
    eb = np.empty(cap_e, dtype=np.int64)
    ef = np.empty(cap_e, dtype=np.int64)
    er = np.empty(cap_e, dtype=np.int64)
    es = np.full(cap_e, -1, dtype=np.int64)
    ev = np.zeros((cap_e, 4))
    E = 0
    for j in range(1, N):
        ea[E] = 0
        eb[E] = j
        ef[E] = 8
        er[E] = 9
        ev[E, 0] = 1.0
        E += 1
    for q in range(P):
        pn = p0 + q
        kind = p_kind[q]
        s = p_sup[q]
        obj = 1 if kind == 0 else 2 + p_arg[q]
        ea[E] = pn
        eb[E] = obj
        ef[E] = 0
        er[E] = 1
        es[E] = 0
        ev[E, 0] = s
        E += 1
        if kind <= 1:
            cell = p_arg[q] if kind == 0 else ry[p_arg[q]] * n + rx[p_arg[q]]
            ea[E] = pn
            eb[E] = l0 + loc_index[cell]
            ef[E] = 2
            er[E] = 3
            es[E] = 1
            ev[E, 0] = s
            E += 1
    for a in range(5):
        ea[E] = a0 + a
        eb[E] = 1
        ef[E] = 4
        er[E] = 5
        ev[E, 0] = 1.0
        E += 1
    for i in range(k):
        ea[E] = a0 + 5 + i
        eb[E] = 2 + i
        ef[E] = 4
        er[E] = 5
        ev[E, 0] = 1.0
        ev[E, 1] = e_dist[i]
        ev[E, 2] = e_acc[i]
        E += 1
    for q in range(P):
        pn = p0 + q
        kind = p_kind[q]
        s = p_sup[q]
        if kind == 0:
            c = p_arg[q]
            if c == S:
                continue
            x = c % n
            y = c // n
            for mv in range(4):
                dx = move_dx[mv]
                nx = x + dx
                ny = y + move_dy[mv]
                moves = mv == 2 or (nx >= 0 and nx < n and ny >= 0 and ny < n)
                ea[E] = pn
                eb[E] = a0 + mv
                ef[E] = 6
                er[E] = 7
                ev[E, 0] = s
                ev[E, 1] = (n - x) / n
                ev[E, 2] = 0.0 if moves else 1.0
                ev[E, 3] = float(-dx) if moves else 0.0
                E += 1
            on_rock = 0.0
            for i in range(k):
                if rx[i] == x and ry[i] == y:
                    on_rock = 1.0
            ea[E] = pn
            eb[E] = a0 + 4
            ef[E] = 6
            er[E] = 7
            ev[E, 0] = s
            ev[E, 2] = on_rock
            E += 1
        elif kind == 1:
            i = p_arg[q]
            for mv in range(4):
                ea[E] = pn
                eb[E] = a0 + mv
                ef[E] = 6
                er[E] = 7
                ev[E, 0] = s
                ev[E, 1] = e_manh[i]
                ev[E, 3] = move_delta[mv, i]
                E += 1
        else:
            i = p_arg[q]
            ea[E] = pn
            eb[E] = a0 + 4
            ef[E] = 6
            er[E] = 7
            ev[E, 0] = s
            ev[E, 1] = e_dist[i]
            ev[E, 2] = coloc[i]
            E += 1
            if kind == 2:
                ea[E] = pn
                eb[E] = a0 + 5 + i
                ef[E] = 6
                er[E] = 7
                ev[E, 0] = s
                ev[E, 1] = e_dist[i]
                ev[E, 2] = e_acc[i]
                E += 1

    E2 = 2 * E
    key = np.empty(E2, dtype=np.int64)
    for j in range(E):
        key[j] = (eb[j] * N + ea[j]) * 16 + ef[j]
        key[E + j] = (ea[j] * N + eb[j]) * 16 + er[j]
    order = np.argsort(key)
    src = np.empty(E2, dtype=np.int64)
    dst = np.empty(E2, dtype=np.int64)
    xe = np.zeros((E2, 20))
    for t in range(E2):
        j = order[t]
        base = j if j < E else j - E
        if j < E:
            src[t] = ea[base]
            dst[t] = eb[base]
            xe[t, ef[base]] = 1.0
        else:
            src[t] = eb[base]
            dst[t] = ea[base]
            xe[t, er[base]] = 1.0
        if es[base] >= 0:
            xe[t, 10 + es[base]] = 1.0
        b = ev[base, 0]
        xe[t, 12] = b
        xe[t, 13 + _band(b)] = 1.0
        xe[t, 17] = ev[base, 1]
        xe[t, 18] = ev[base, 2]
        xe[t, 19] = ev[base, 3]

    legal = np.ones(n_act, dtype=np.bool_)
    at_rock = False
    for i in range(k):
        if mass[ry[i] * n + rx[i]] > 0:
            at_rock = True
    legal[4] = at_rock
    # the graph is a function of these marginals alone, so they key caches
    key = np.empty(S + 1 + 2 * k)
    key[: S + 1] = mass
    key[S + 1 : S + 1 + k] = good
    key[S + 1 + k :] = sampled
    dst_starts = np.searchsorted(dst, np.arange(N))
    return node_type, xn, src, dst, xe, a0, legal, key, dst_starts


rs_graph_arrays = None
if K.USING_NUMBA:
    from numba import njit

    _band = njit(cache=True)(_band)
    _g = dict(globals(), _band=_band)
    rs_graph_arrays = njit(cache=True)(type(_rs_graph)(_rs_graph.__code__, _g))


def rocksample_arrays(states, weights, model, tau):
    """Graph arrays for a RockSample belief, or None when numba is unavailable."""
    if rs_graph_arrays is None:
        return None
    return rs_graph_arrays(
        states, weights, model.grid_n, model.rock_x, model.rock_y, model.halflife, tau, _MOVE_DX, _MOVE_DY
    )
